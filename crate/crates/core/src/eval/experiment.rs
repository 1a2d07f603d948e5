use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::write_report;
use super::MetricsReport;
use crate::binio::write_atomic;
use crate::bounds::{evaluate_bounds, extract_features, MineConfig};
use crate::error::{Error, Result};
use crate::msgpass::MessagePassingConfig;
use crate::net::{train_with, EpochLog, ModelKind, Network, NetworkConfig, TrainConfig, TrainOutcome};
use crate::signal::{build_dataset, Dataset, ScenarioFile, SplitDataset};

/// Version of the results CSV layout, written as a leading comment.
pub const RESULTS_CSV_VERSION: u32 = 1;

/// Generates the splits described by a scenario file.
pub fn generate(file: &ScenarioFile) -> Result<SplitDataset> {
    let (cfg, ch) = file.resolve()?;
    build_dataset(&cfg, &ch, file.scenario.samples_per_combo)
}

/// Trunk overrides applied on top of the reference extractor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrunkSettings {
    pub base_channels: usize,
    pub num_blocks: usize,
    pub hidden: usize,
}

impl Default for TrunkSettings {
    fn default() -> Self {
        Self { base_channels: 32, num_blocks: 3, hidden: 256 }
    }
}

impl TrunkSettings {
    pub fn network(&self, kind: ModelKind, num_emitters: usize, input_len: usize, mp: MessagePassingConfig) -> NetworkConfig {
        let mut cfg = NetworkConfig::reference(kind, num_emitters, input_len);
        cfg.extractor.base_channels = self.base_channels;
        cfg.extractor.num_blocks = self.num_blocks;
        cfg.extractor.hidden = self.hidden;
        if kind == ModelKind::Ismei {
            cfg.message_passing = Some(mp);
        }
        cfg
    }
}

/// A grid of (seed, SNR, model) runs over one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: ScenarioFile,
    pub models: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    pub snr_db: Vec<f64>,
    pub train: TrainConfig,
    pub trunk: TrunkSettings,
    pub message_passing: MessagePassingConfig,
    pub bounds: bool,
    pub mine: MineConfig,
}

/// File form of [`ExperimentSpec`]; `scenario` is a path relative to the
/// experiment file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    experiment: ExperimentSection,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    trunk: TrunkSettings,
    #[serde(default)]
    message_passing: MessagePassingConfig,
    #[serde(default)]
    mine: MineConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    scenario: PathBuf,
    models: Vec<ModelKind>,
    seeds: Vec<u64>,
    snr_db: Vec<f64>,
    #[serde(default)]
    bounds: bool,
}

impl ExperimentSpec {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let f: ExperimentFile = toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("experiment file: {e}")))?;
        let path = base_dir.join(&f.experiment.scenario);
        let scenario = ScenarioFile::load(&path)?;
        let spec = Self {
            scenario,
            models: f.experiment.models,
            seeds: f.experiment.seeds,
            snr_db: f.experiment.snr_db,
            train: f.train,
            trunk: f.trunk,
            message_passing: f.message_passing,
            bounds: f.experiment.bounds,
            mine: f.mine,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.seeds.is_empty() || self.snr_db.is_empty() {
            return Err(Error::InvalidConfig("experiment needs at least one model, seed and SNR".into()));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("SNR values must be finite".into()));
        }
        self.train.validate()
    }

    /// Scenario for one grid point: the SNR and seed replace the file's.
    pub fn scenario_for(&self, seed: u64, snr_db: f64) -> ScenarioFile {
        let mut s = self.scenario.clone();
        s.scenario.seed = seed;
        s.scenario.snr_db = snr_db;
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub model: ModelKind,
    pub seed: u64,
    pub snr_db: f64,
    pub overlap: String,
    pub channel: String,
    pub num_emitters: usize,
    pub test_subset: f64,
    pub test_hamming: f64,
    pub val_subset: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub params: usize,
    pub mutual_info: Option<f64>,
    pub subset_bound: Option<f64>,
    pub hamming_bound: Option<f64>,
}

impl ExperimentRow {
    pub const HEADER: &'static str = "model,seed,snr_db,overlap,channel,num_emitters,test_subset,test_hamming,val_subset,best_epoch,epochs_run,params,mutual_info,subset_bound,hamming_bound";

    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.model,
            self.seed,
            self.snr_db,
            self.overlap,
            self.channel,
            self.num_emitters,
            self.test_subset,
            self.test_hamming,
            self.val_subset,
            self.best_epoch,
            self.epochs_run,
            self.params,
            opt(self.mutual_info),
            opt(self.subset_bound),
            opt(self.hamming_bound)
        )
    }
}

pub fn results_csv(rows: &[ExperimentRow]) -> String {
    let mut out = format!("# results v{RESULTS_CSV_VERSION}\n{}\n", ExperimentRow::HEADER);
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

pub fn epochs_csv(history: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss,val_subset,val_hamming,lr\n");
    for l in history {
        let _ = writeln!(out, "{},{},{},{},{}", l.epoch, l.loss, l.val_subset, l.val_hamming, l.lr);
    }
    out
}

/// Concatenation of all three splits (bound estimation needs many pairs).
pub fn all_splits(data: &SplitDataset) -> Result<Dataset> {
    let samples = [&data.train, &data.val, &data.test].iter().flat_map(|d| d.samples.iter().cloned()).collect();
    Dataset::new(data.train.num_emitters, data.train.frame_len, samples)
}

/// Test-set metrics of a trained network.
pub fn evaluate(net: &Network, data: &Dataset, batch_size: usize, threshold: f64, scenario: &str, seed: u64) -> Result<MetricsReport> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, truth) = data.gather(&idx);
    let pred = net.predict_labels(&x, batch_size, threshold)?;
    MetricsReport::compute(&pred, &truth, scenario, seed)
}

/// Output of [`run_experiment`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub csv_version: u32,
    pub rows: Vec<ExperimentRow>,
}

fn point_name(model: ModelKind, seed: u64, snr: f64) -> String {
    format!("{model}_seed{seed}_snr{snr}")
}

/// Runs every grid point in order (seed, SNR, model). Models at one
/// (seed, SNR) share the same generated data and training seed. When
/// `out_dir` is given, per-point epoch logs and reports are written as each
/// point completes, followed by `results.csv` and `summary.json`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: Option<&Path>, mut progress: impl FnMut(&str)) -> Result<ExperimentSummary> {
    spec.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("points")).map_err(|e| Error::io(dir, e))?;
    }
    let mut rows = Vec::new();
    for &seed in &spec.seeds {
        for &snr in &spec.snr_db {
            let file = spec.scenario_for(seed, snr);
            let data = generate(&file)?;
            for &model in &spec.models {
                let name = point_name(model, seed, snr);
                progress(&format!("{name}: training"));
                let cfg = spec.trunk.network(model, file.scenario.num_emitters, file.signal.frame_len, spec.message_passing);
                let net = Network::new(cfg, seed)?;
                let train_cfg = TrainConfig { seed, ..spec.train };
                let outcome = train_with(net, &data, &train_cfg, |l| {
                    progress(&format!("{name}: epoch {} loss {:.4} val subset {:.4}", l.epoch, l.loss, l.val_subset))
                })?;
                let row = grid_row(spec, &file, model, seed, snr, &data, &outcome)?;
                if let Some(dir) = out_dir {
                    write_atomic(&dir.join("points").join(format!("{name}_epochs.csv")), epochs_csv(&outcome.history).as_bytes())?;
                    write_report(&dir.join("points").join(format!("{name}.json")), &row)?;
                }
                progress(&format!("{name}: test subset {:.4}", row.test_subset));
                rows.push(row);
            }
        }
    }
    let summary = ExperimentSummary { csv_version: RESULTS_CSV_VERSION, rows };
    if let Some(dir) = out_dir {
        write_atomic(&dir.join("results.csv"), results_csv(&summary.rows).as_bytes())?;
        write_report(&dir.join("summary.json"), &summary)?;
    }
    Ok(summary)
}

fn grid_row(
    spec: &ExperimentSpec,
    file: &ScenarioFile,
    model: ModelKind,
    seed: u64,
    snr: f64,
    data: &SplitDataset,
    outcome: &TrainOutcome,
) -> Result<ExperimentRow> {
    let net = &outcome.network;
    let report = evaluate(net, &data.test, spec.train.batch_size, spec.train.threshold, "", seed)?;
    let (mi, sb, hb) = if spec.bounds {
        let all = all_splits(data)?;
        let feats = extract_features(net, &all, spec.train.batch_size)?;
        let ev = evaluate_bounds(&feats, &all.labels(), &MineConfig { seed, ..spec.mine })?;
        (Some(ev.mutual_info), Some(ev.report.subset_bound), Some(ev.report.hamming_bound))
    } else {
        (None, None, None)
    };
    Ok(ExperimentRow {
        model,
        seed,
        snr_db: snr,
        overlap: file.scenario.overlap.to_string(),
        channel: format!("{:?}", file.scenario.channel).to_lowercase(),
        num_emitters: file.scenario.num_emitters,
        test_subset: report.subset_accuracy,
        test_hamming: report.hamming_accuracy,
        val_subset: outcome.best_val_subset,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        params: net.num_params(),
        mutual_info: mi,
        subset_bound: sb,
        hamming_bound: hb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_file_parses_and_rejects_typos() {
        let dir = tempfile::tempdir().unwrap();
        let scen = ScenarioFile::reference(2, crate::signal::Overlap::None, 10.0, 6, 1);
        std::fs::write(dir.path().join("s.toml"), scen.to_toml()).unwrap();
        let good = "[experiment]\nscenario = \"s.toml\"\nmodels = [\"smei\", \"ismei\"]\nseeds = [1, 2]\nsnr_db = [6.0, 12.0]\n[train]\nepochs = 3\n";
        let spec = ExperimentSpec::parse(good, dir.path()).unwrap();
        assert_eq!(spec.train.epochs, 3);
        assert_eq!(spec.train.batch_size, 128);
        assert_eq!(spec.scenario_for(2, 12.0).scenario.snr_db, 12.0);
        let bad = good.replace("epochs", "epohcs");
        assert!(ExperimentSpec::parse(&bad, dir.path()).is_err());
    }

    #[test]
    fn csv_has_fixed_columns() {
        let row = ExperimentRow {
            model: ModelKind::Smei,
            seed: 1,
            snr_db: 12.0,
            overlap: "50%".into(),
            channel: "awgn".into(),
            num_emitters: 3,
            test_subset: 0.5,
            test_hamming: 0.75,
            val_subset: 0.5,
            best_epoch: 2,
            epochs_run: 3,
            params: 10,
            mutual_info: None,
            subset_bound: Some(0.9),
            hamming_bound: None,
        };
        let csv = results_csv(&[row]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# results v1");
        assert_eq!(lines[1].split(',').count(), lines[2].split(',').count());
        assert!(lines[2].ends_with(",,0.9,"));
    }
}
