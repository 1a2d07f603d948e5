use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Mode, ModelKind, Network};
use crate::error::{Error, Result};
use crate::eval::{hamming_accuracy, subset_accuracy};
use crate::signal::{class_from_label, Dataset, SplitDataset};
use crate::tensor::{Adam, Graph, LrSchedule, Real, Tensor};

/// Optimization settings. Defaults follow the reference training recipe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub warmup_ratio: f64,
    pub step_size: usize,
    pub decay: f64,
    pub patience: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            lr: 5e-4,
            warmup_epochs: 5,
            warmup_ratio: 0.1,
            step_size: 25,
            decay: 0.5,
            patience: 25,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            warmup_epochs: self.warmup_epochs,
            warmup_ratio: self.warmup_ratio,
            step_size: self.step_size,
            decay: self.decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::InvalidConfig("need at least one epoch and batches of two or more".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_subset: f64,
    pub val_hamming: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the highest validation subset accuracy
    /// (earliest on ties).
    pub network: Network,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_subset: f64,
}

fn batch_loss<T: Real>(net: &Network<T>, g: &mut Graph<T>, x: Vec<f32>, labels: &[Vec<u8>], mode: Mode) -> Result<(crate::tensor::Var, super::Forward<T>)> {
    let t = net.config().extractor.input_len;
    let b = labels.len();
    let data = x.into_iter().map(|v| T::from_f64(v as f64)).collect();
    let xv = g.input(Tensor::new(&[b, 2, t], data)?);
    let fwd = net.forward(g, xv, mode)?;
    let loss = match net.kind() {
        ModelKind::Multiclass => {
            let targets: Vec<usize> = labels.iter().map(|l| class_from_label(l)).collect();
            g.softmax_cross_entropy(fwd.logits, &targets)?
        }
        _ => {
            let flat: Vec<T> = labels.iter().flatten().map(|&v| T::from_f64(v as f64)).collect();
            g.bce_with_logits(fwd.logits, &flat)?
        }
    };
    Ok((loss, fwd))
}

/// Training-mode loss of the untouched network on the first `n` training
/// samples (in stored order).
pub fn initial_loss(net: &Network, data: &Dataset, n: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..n.min(data.len())).collect();
    let (x, labels) = data.gather(&idx);
    let mut g = Graph::new();
    let (loss, _) = batch_loss(net, &mut g, x, &labels, Mode::Train)?;
    Ok(g.value(loss).item() as f64)
}

/// Subset and Hamming accuracy of `net` on `data`.
pub fn validate(net: &Network, data: &Dataset, batch_size: usize, threshold: f64) -> Result<(f64, f64)> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, truth) = data.gather(&idx);
    let pred = net.predict_labels(&x, batch_size, threshold)?;
    Ok((subset_accuracy(&pred, &truth)?, hamming_accuracy(&pred, &truth)?))
}

pub fn train(net: Network, data: &SplitDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(net, data, cfg, |_| {})
}

/// Mini-batch Adam on the training split with per-epoch validation and
/// early stopping. `on_epoch` sees each log row as it is produced.
pub fn train_with(
    mut net: Network,
    data: &SplitDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.num_emitters != net.config().extractor.num_emitters || data.train.frame_len != net.config().extractor.input_len {
        return Err(Error::Dimension(format!(
            "dataset has K = {}, T = {}; model expects K = {}, T = {}",
            data.train.num_emitters,
            data.train.frame_len,
            net.config().extractor.num_emitters,
            net.config().extractor.input_len
        )));
    }
    if data.train.len() < 2 || data.val.is_empty() {
        return Err(Error::DegenerateInput("training needs at least two training and one validation sample".into()));
    }
    let schedule = cfg.schedule();
    let mut opt = Adam::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_0c0d_e5ee_d000);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Network, usize, f64)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            // A lone trailing sample cannot provide batch statistics.
            if batch.len() < 2 {
                continue;
            }
            let (x, labels) = data.train.gather(batch);
            let mut g = Graph::new();
            let (loss, fwd) = batch_loss(&net, &mut g, x, &labels, Mode::Train)?;
            let lv = g.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::Diverged { stage: "epoch", index: epoch, reason: format!("loss became {lv}") });
            }
            g.backward_into(loss, net.store_mut());
            net.update_running_stats(&fwd);
            opt.step(net.store_mut(), lr).map_err(|e| match e {
                Error::Diverged { reason, .. } => Error::Diverged { stage: "epoch", index: epoch, reason },
                other => other,
            })?;
            total += lv * batch.len() as f64;
            seen += batch.len();
        }
        let (val_subset, val_hamming) = validate(&net, &data.val, cfg.batch_size, cfg.threshold)?;
        let log = EpochLog { epoch, loss: total / seen.max(1) as f64, val_subset, val_hamming, lr };
        on_epoch(&log);
        history.push(log);
        if best.as_ref().is_none_or(|b| val_subset > b.2) {
            best = Some((net.clone(), epoch, val_subset));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (network, best_epoch, best_val_subset) = best.expect("at least one epoch");
    Ok(TrainOutcome { network, history, best_epoch, best_val_subset })
}
