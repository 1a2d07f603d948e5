//! Fano-type accuracy bounds and mutual information estimation.

mod fano;
mod mine;

pub use fano::{
    compute_bounds, empirical_entropy, g, g_inverse_upper, hamming_bound, subset_bound, BoundInputs, BoundReport,
};
pub use mine::{mine_estimate, mine_train, MineConfig, MineEstimator, MineTraining};

use crate::error::{Error, Result};
use crate::net::Network;
use crate::signal::Dataset;

/// Penultimate (post-FC) activations of `net` for every sample of `data`,
/// row-major `N x D`, computed in eval mode.
pub fn extract_features(net: &Network, data: &Dataset, batch_size: usize) -> Result<Vec<f64>> {
    let e = net.config().extractor;
    if data.num_emitters != e.num_emitters || data.frame_len != e.input_len {
        return Err(Error::Dimension(format!(
            "dataset has K = {}, T = {}; checkpoint expects K = {}, T = {}",
            data.num_emitters, data.frame_len, e.num_emitters, e.input_len
        )));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, _) = data.gather(&idx);
    let (_, feats) = net.infer(&x, batch_size)?;
    Ok(feats.into_iter().map(f64::from).collect())
}

/// Full bound evaluation from features and labels: plug-in label entropy,
/// MINE estimate clamped to `[0, H]`, then the subset and Hamming bounds.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundEvaluation {
    pub entropy: f64,
    pub uniform_entropy: f64,
    pub mutual_info_raw: f64,
    pub mutual_info: f64,
    pub report: BoundReport,
}

pub fn evaluate_bounds(features: &[f64], labels: &[Vec<u8>], cfg: &MineConfig) -> Result<BoundEvaluation> {
    let k = labels.first().map_or(0, Vec::len);
    if k == 0 {
        return Err(Error::DegenerateInput("no labels".into()));
    }
    let m = (1usize << k) - 1;
    let entropy = empirical_entropy(labels)?;
    let raw = mine_train(features, labels, cfg)?.estimate;
    let mi = raw.clamp(0.0, entropy);
    let inputs = BoundInputs { label_cardinality: m, entropy, mutual_info: mi };
    Ok(BoundEvaluation {
        entropy,
        uniform_entropy: (m as f64).ln(),
        mutual_info_raw: raw,
        mutual_info: mi,
        report: compute_bounds(&inputs, k)?,
    })
}
