//! Donsker-Varadhan mutual information estimation with a learned statistic
//! network `T(x, label)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Adam, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineConfig {
    pub hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of final steps whose batch estimates are averaged.
    pub average_fraction: f64,
    pub seed: u64,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self { hidden: 128, steps: 2000, batch_size: 256, lr: 1e-3, average_fraction: 0.1, seed: 0 }
    }
}

/// Trained statistic network plus the feature standardization it expects.
#[derive(Clone, Debug)]
pub struct MineEstimator {
    store: ParamStore<f64>,
    layers: [(ParamId, ParamId); 3],
    feature_dim: usize,
    num_emitters: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// Result of [`mine_train`].
#[derive(Clone, Debug)]
pub struct MineTraining {
    pub estimator: MineEstimator,
    /// Mean of the per-batch bound over the final steps.
    pub estimate: f64,
    /// Per-step batch bound values.
    pub trace: Vec<f64>,
}

fn check_inputs(features: &[f64], labels: &[Vec<u8>]) -> Result<(usize, usize)> {
    let n = labels.len();
    if n == 0 || !features.len().is_multiple_of(n) {
        return Err(Error::Dimension(format!("{} feature values for {n} labels", features.len())));
    }
    let k = labels[0].len();
    if labels.iter().any(|l| l.len() != k) {
        return Err(Error::Dimension("label vectors differ in length".into()));
    }
    Ok((features.len() / n, k))
}

impl MineEstimator {
    fn new(q: usize, k: usize, hidden: usize, rng: &mut ChaCha8Rng, mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        let mut store = ParamStore::new();
        let dims = [(q + k, hidden), (hidden, hidden), (hidden, 1)];
        let mut layers = Vec::with_capacity(3);
        for (i, &(din, dout)) in dims.iter().enumerate() {
            let b = 1.0 / (din as f64).sqrt();
            let w = Tensor::new(&[dout, din], (0..din * dout).map(|_| rng.random_range(-b..b)).collect())?;
            let bias = Tensor::new(&[dout], (0..dout).map(|_| rng.random_range(-b..b)).collect())?;
            layers.push((store.add(format!("layer{i}.weight"), w, true)?, store.add(format!("layer{i}.bias"), bias, true)?));
        }
        Ok(Self {
            store,
            layers: [layers[0], layers[1], layers[2]],
            feature_dim: q,
            num_emitters: k,
            mean,
            std,
        })
    }

    /// Standardized `[x, label]` rows for the given pairing.
    fn rows(&self, features: &[f64], labels: &[Vec<u8>], idx: &[usize], label_idx: &[usize]) -> Tensor<f64> {
        let (q, k) = (self.feature_dim, self.num_emitters);
        let mut data = Vec::with_capacity(idx.len() * (q + k));
        for (&i, &j) in idx.iter().zip(label_idx) {
            let x = &features[i * q..(i + 1) * q];
            data.extend(x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s));
            data.extend(labels[j].iter().map(|&b| b as f64));
        }
        Tensor::new(&[idx.len(), q + k], data).expect("row layout")
    }

    fn statistic(&self, g: &mut Graph<f64>, input: Tensor<f64>) -> Result<Var> {
        let mut h = g.input(input);
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = g.param(&self.store, w);
            let bv = g.param(&self.store, b);
            h = g.linear(h, wv, Some(bv))?;
            if i < 2 {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Bound value and graph for one joint/marginal pairing.
    fn bound(&self, g: &mut Graph<f64>, joint: Tensor<f64>, marginal: Tensor<f64>) -> Result<Var> {
        let tj = self.statistic(g, joint)?;
        let tm = self.statistic(g, marginal)?;
        let a = g.mean(tj);
        let b = g.log_mean_exp(tm);
        g.sub(a, b)
    }
}

/// Fits the statistic network by gradient ascent on the Donsker-Varadhan
/// bound. Marginal pairs come from permuting labels within each batch.
/// `features` holds `N x q` values row-major.
pub fn mine_train(features: &[f64], labels: &[Vec<u8>], cfg: &MineConfig) -> Result<MineTraining> {
    let (q, k) = check_inputs(features, labels)?;
    let n = labels.len();
    if n < 2 || cfg.steps == 0 || cfg.batch_size < 2 {
        return Err(Error::InvalidConfig("MINE needs at least two samples, one step and batches of two".into()));
    }
    let mut mean = vec![0.0; q];
    let mut sq = vec![0.0; q];
    for row in features.chunks(q) {
        for (j, &v) in row.iter().enumerate() {
            mean[j] += v;
            sq[j] += v * v;
        }
    }
    let nf = n as f64;
    mean.iter_mut().for_each(|m| *m /= nf);
    let std: Vec<f64> = sq.iter().zip(&mean).map(|(s, m)| (s / nf - m * m).max(0.0).sqrt().max(1e-8)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut est = MineEstimator::new(q, k, cfg.hidden, &mut rng, mean, std)?;
    let mut opt = Adam::new();
    let bs = cfg.batch_size.min(n);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut all: Vec<usize> = (0..n).collect();
    for step in 0..cfg.steps {
        all.shuffle(&mut rng);
        let idx = &all[..bs];
        let mut perm = idx.to_vec();
        perm.shuffle(&mut rng);
        let mut g = Graph::new();
        let joint = est.rows(features, labels, idx, idx);
        let marginal = est.rows(features, labels, idx, &perm);
        let dv = est.bound(&mut g, joint, marginal)?;
        let value = g.value(dv).item();
        if !value.is_finite() {
            return Err(Error::Diverged { stage: "iteration", index: step, reason: format!("bound became {value}") });
        }
        trace.push(value);
        let loss = g.scale(dv, -1.0);
        g.backward_into(loss, &mut est.store);
        opt.step(&mut est.store, cfg.lr).map_err(|e| match e {
            Error::Diverged { reason, .. } => Error::Diverged { stage: "iteration", index: step, reason },
            other => other,
        })?;
    }
    let tail = ((cfg.steps as f64 * cfg.average_fraction).ceil() as usize).clamp(1, cfg.steps);
    let estimate = trace[cfg.steps - tail..].iter().sum::<f64>() / tail as f64;
    Ok(MineTraining { estimator: est, estimate, trace })
}

/// Evaluates the bound of a trained estimator on `(features, labels)`,
/// averaging over `shuffles` label permutations for the marginal term.
pub fn mine_estimate(est: &MineEstimator, features: &[f64], labels: &[Vec<u8>], shuffles: usize, seed: u64) -> Result<f64> {
    let (q, k) = check_inputs(features, labels)?;
    if q != est.feature_dim || k != est.num_emitters {
        return Err(Error::Dimension(format!(
            "estimator expects q = {}, K = {}; got q = {q}, K = {k}",
            est.feature_dim, est.num_emitters
        )));
    }
    let n = labels.len();
    let idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..shuffles.max(1) {
        let mut perm = idx.clone();
        perm.shuffle(&mut rng);
        let mut g = Graph::new();
        let dv = est.bound(&mut g, est.rows(features, labels, &idx, &idx), est.rows(features, labels, &idx, &perm))?;
        total += g.value(dv).item();
    }
    Ok(total / shuffles.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::label_from_class;

    fn discrete(n: usize, seed: u64) -> (Vec<f64>, Vec<Vec<u8>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<Vec<u8>> = (0..n).map(|_| label_from_class(rng.random_range(0..3), 2)).collect();
        let features = labels.iter().flatten().map(|&b| b as f64).collect();
        (features, labels)
    }

    #[test]
    fn small_run_is_finite_and_deterministic() {
        let (x, l) = discrete(300, 1);
        let cfg = MineConfig { steps: 50, batch_size: 64, hidden: 16, ..Default::default() };
        let a = mine_train(&x, &l, &cfg).unwrap();
        let b = mine_train(&x, &l, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert!(a.estimate.is_finite());
        let e = mine_estimate(&a.estimator, &x, &l, 3, 0).unwrap();
        assert!(e.is_finite());
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(mine_train(&[0.0; 7], &vec![vec![0, 1]; 3], &MineConfig::default()).is_err());
    }
}
