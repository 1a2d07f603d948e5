use crate::error::{Error, Result};

/// Activation probabilities and the thresholded set of active emitters.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// Zero-based indices of emitters with `p > threshold`.
    pub active: Vec<usize>,
    pub threshold: f64,
}

impl Prediction {
    /// Active set as a 0/1 label vector.
    pub fn label(&self) -> Vec<u8> {
        let mut l = vec![0u8; self.probs.len()];
        for &m in &self.active {
            l[m] = 1;
        }
        l
    }
}

/// Sigmoid of each logit, then a strict threshold. An empty set is a valid
/// outcome.
pub fn detect(logits: &[f64], threshold: f64) -> Result<Prediction> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain { value: threshold, domain: "(0, 1)" });
    }
    let probs: Vec<f64> = logits.iter().map(|&z| crate::tensor::sigmoid(z)).collect();
    let active = probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > threshold)
        .map(|(m, _)| m)
        .collect();
    Ok(Prediction { probs, active, threshold })
}
