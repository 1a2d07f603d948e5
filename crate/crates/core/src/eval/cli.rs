//! The `smei` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::experiment::{all_splits, epochs_csv, evaluate, generate, run_experiment, ExperimentSpec};
use super::io::{read_dataset, write_dataset, write_report};
use super::{correlation_matrix, ExperimentRow};
use crate::binio::write_atomic;
use crate::bounds::{evaluate_bounds, extract_features, MineConfig};
use crate::error::{Error, Result};
use crate::msgpass::MessagePassingConfig;
use crate::net::{
    load_checkpoint, save_checkpoint, train_with, Checkpoint, ComplexityRow, ModelKind, Network, NetworkConfig,
    TrainConfig,
};
use crate::signal::ScenarioFile;

#[derive(Debug, Parser)]
#[command(name = "smei", version, about = "Multi-emitter RF fingerprint identification lab")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for data generation and training (overrides files).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for every output file.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Settings file: training settings for `train`, the grid for `experiment`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/val/test dataset files from a scenario.
    Gen {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        snr: Option<f64>,
    },
    /// Train a model on freshly generated data.
    Train {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "smei")]
        model: ModelKind,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 2)]
        rounds: usize,
        #[arg(long, default_value_t = 32)]
        base_channels: usize,
    },
    /// Evaluate a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Accuracy upper bounds from MINE estimates, one dataset per SNR.
    Bound {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        dataset: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        snr_list: Vec<f64>,
        #[arg(long, default_value_t = 2000)]
        mine_steps: usize,
    },
    /// Pearson correlation matrix of class-average waveforms.
    Corr {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 300)]
        samples_per_class: usize,
    },
    /// Parameter and FLOP counts for a range of emitter counts.
    Complexity {
        #[arg(long, default_value_t = 8)]
        max_k: usize,
        #[arg(long, default_value_t = 1024)]
        input_len: usize,
    },
    /// Run the (seed, SNR, model) grid described by `--config`.
    Experiment,
}

fn scenario_with_seed(path: &Path, seed: Option<u64>) -> Result<ScenarioFile> {
    let mut s = ScenarioFile::load(path)?;
    if let Some(seed) = seed {
        s.scenario.seed = seed;
    }
    Ok(s)
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

pub fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    mkdir(&c.out_dir)?;
    match cli.command {
        Command::Gen { scenario, snr } => {
            let mut s = scenario_with_seed(&scenario, c.seed)?;
            if let Some(snr) = snr {
                s.scenario.snr_db = snr;
            }
            let data = generate(&s)?;
            write_dataset(&c.out_dir.join("train.smd"), &data.train)?;
            write_dataset(&c.out_dir.join("val.smd"), &data.val)?;
            write_dataset(&c.out_dir.join("test.smd"), &data.test)?;
            write_report(&c.out_dir.join("stats.json"), &data.stats)?;
            println!("train {} / val {} / test {} samples", data.train.len(), data.val.len(), data.test.len());
        }
        Command::Train { scenario, model, epochs, batch_size, threshold, lr, heads, rounds, base_channels } => {
            let s = scenario_with_seed(&scenario, c.seed)?;
            let mut tc = match &c.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    toml::from_str::<TrainConfig>(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
                }
                None => TrainConfig::default(),
            };
            tc.seed = c.seed.unwrap_or(s.scenario.seed);
            tc.epochs = epochs.unwrap_or(tc.epochs);
            tc.batch_size = batch_size.unwrap_or(tc.batch_size);
            tc.threshold = threshold.unwrap_or(tc.threshold);
            tc.lr = lr.unwrap_or(tc.lr);
            tc.validate()?;
            let data = generate(&s)?;
            let mut cfg = NetworkConfig::reference(model, s.scenario.num_emitters, s.signal.frame_len);
            cfg.extractor.base_channels = base_channels;
            if model == ModelKind::Ismei {
                cfg.message_passing = Some(MessagePassingConfig { heads, rounds });
            }
            let net = Network::new(cfg, tc.seed)?;
            let stem = format!("{model}_seed{}", tc.seed);
            let out = train_with(net, &data, &tc, |l| {
                log::info!("epoch {} loss {:.5} val subset {:.4} hamming {:.4} lr {:.2e}", l.epoch, l.loss, l.val_subset, l.val_hamming, l.lr)
            })?;
            write_text(&c.out_dir.join(format!("{stem}_epochs.csv")), &epochs_csv(&out.history))?;
            let report = evaluate(&out.network, &data.test, tc.batch_size, tc.threshold, &describe(&s), tc.seed)?;
            write_report(&c.out_dir.join(format!("{stem}_test.json")), &report)?;
            save_checkpoint(&c.out_dir.join(format!("{stem}.ckpt")), &Checkpoint { network: out.network, optimizer: None })?;
            println!(
                "best epoch {} (val subset {:.4}); test subset {:.4}, hamming {:.4}",
                out.best_epoch, out.best_val_subset, report.subset_accuracy, report.hamming_accuracy
            );
        }
        Command::Eval { checkpoint, dataset, batch_size, threshold } => {
            let ck = load_checkpoint(&checkpoint)?;
            let data = read_dataset(&dataset)?;
            check_compat(&ck.network, &data)?;
            let report = evaluate(&ck.network, &data, batch_size, threshold, &dataset.display().to_string(), c.seed.unwrap_or(0))?;
            write_report(&c.out_dir.join("eval.json"), &report)?;
            println!("subset {:.4}, hamming {:.4} over {} samples", report.subset_accuracy, report.hamming_accuracy, report.num_samples);
        }
        Command::Bound { checkpoint, dataset, snr_list, mine_steps } => {
            if dataset.len() != snr_list.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} dataset files for {} SNR values",
                    dataset.len(),
                    snr_list.len()
                )));
            }
            let ck = load_checkpoint(&checkpoint)?;
            let mine = MineConfig { steps: mine_steps, seed: c.seed.unwrap_or(0), ..MineConfig::default() };
            let mut csv = String::from("snr,H_lambda,I_hat,C,subset_bound,hamming_bound\n");
            for (path, snr) in dataset.iter().zip(&snr_list) {
                let data = read_dataset(path)?;
                check_compat(&ck.network, &data)?;
                if data.len() < 500 {
                    log::warn!("{} holds {} samples; MINE estimates are unreliable below 500", path.display(), data.len());
                }
                let feats = extract_features(&ck.network, &data, 128)?;
                let ev = evaluate_bounds(&feats, &data.labels(), &mine)?;
                csv.push_str(&format!(
                    "{snr},{},{},{},{},{}\n",
                    ev.entropy, ev.mutual_info, ev.report.c, ev.report.subset_bound, ev.report.hamming_bound
                ));
            }
            write_text(&c.out_dir.join("bounds.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Corr { scenario, samples_per_class } => {
            let s = scenario_with_seed(&scenario, c.seed)?;
            let data = generate(&s)?;
            let m = correlation_matrix(&all_splits(&data)?, samples_per_class)?;
            write_text(&c.out_dir.join("corr.csv"), &m.to_csv())?;
            let summary = m.sharing_summary();
            write_report(&c.out_dir.join("corr_summary.json"), &summary)?;
            println!(
                "mean rho: sharing {:.4} over {} pairs, disjoint {:.4} over {} pairs",
                summary.sharing_mean, summary.sharing_pairs, summary.disjoint_mean, summary.disjoint_pairs
            );
        }
        Command::Complexity { max_k, input_len } => {
            let mut csv = String::from("model,num_emitters,params,head_params,flops,head_flops\n");
            for k in 2..=max_k {
                for kind in [ModelKind::Smei, ModelKind::Ismei, ModelKind::Multiclass] {
                    let row = ComplexityRow::measure(NetworkConfig::reference(kind, k, input_len))?;
                    csv.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        row.kind, row.num_emitters, row.params, row.head_params, row.flops, row.head_flops
                    ));
                }
            }
            write_text(&c.out_dir.join("complexity.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Experiment => {
            let path = c
                .config
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("experiment needs --config <file>".into()))?;
            let mut spec = ExperimentSpec::load(path)?;
            if let Some(seed) = c.seed {
                spec.seeds = vec![seed];
            }
            let summary = run_experiment(&spec, Some(&c.out_dir), |m| log::info!("{m}"))?;
            println!("{}", ExperimentRow::HEADER);
            for r in &summary.rows {
                println!("{}", r.csv_line());
            }
        }
    }
    Ok(())
}

fn describe(s: &ScenarioFile) -> String {
    format!(
        "K={} overlap={} channel={:?} snr={}dB",
        s.scenario.num_emitters, s.scenario.overlap, s.scenario.channel, s.scenario.snr_db
    )
}

fn check_compat(net: &Network, data: &crate::signal::Dataset) -> Result<()> {
    let e = net.config().extractor;
    if e.num_emitters != data.num_emitters || e.input_len != data.frame_len {
        return Err(Error::Dimension(format!(
            "checkpoint expects K = {}, T = {}; dataset has K = {}, T = {}",
            e.num_emitters, e.input_len, data.num_emitters, data.frame_len
        )));
    }
    Ok(())
}
