use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(preds: &[Vec<u8>], truths: &[Vec<u8>]) -> Result<usize> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} ground-truth labels",
            preds.len(),
            truths.len()
        )));
    }
    let k = truths[0].len();
    if preds.iter().chain(truths).any(|l| l.len() != k) {
        return Err(Error::Dimension("label vectors differ in length".into()));
    }
    Ok(k)
}

/// Fraction of samples whose whole label vector is correct.
pub fn subset_accuracy(preds: &[Vec<u8>], truths: &[Vec<u8>]) -> Result<f64> {
    check(preds, truths)?;
    let hits = preds.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Fraction of correct label positions over all samples.
pub fn hamming_accuracy(preds: &[Vec<u8>], truths: &[Vec<u8>]) -> Result<f64> {
    let k = check(preds, truths)?;
    let hits: usize = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| p.iter().zip(t).filter(|(a, b)| a == b).count())
        .sum();
    Ok(hits as f64 / (preds.len() * k) as f64)
}

/// Accuracy of each label position separately.
pub fn per_emitter_accuracy(preds: &[Vec<u8>], truths: &[Vec<u8>]) -> Result<Vec<f64>> {
    let k = check(preds, truths)?;
    let n = preds.len() as f64;
    Ok((0..k)
        .map(|m| preds.iter().zip(truths).filter(|(p, t)| p[m] == t[m]).count() as f64 / n)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub subset_accuracy: f64,
    pub hamming_accuracy: f64,
    pub per_emitter: Vec<f64>,
    pub num_samples: usize,
    pub num_emitters: usize,
    pub scenario: String,
    pub seed: u64,
}

impl MetricsReport {
    pub fn compute(preds: &[Vec<u8>], truths: &[Vec<u8>], scenario: impl Into<String>, seed: u64) -> Result<Self> {
        Ok(Self {
            subset_accuracy: subset_accuracy(preds, truths)?,
            hamming_accuracy: hamming_accuracy(preds, truths)?,
            per_emitter: per_emitter_accuracy(preds, truths)?,
            num_samples: preds.len(),
            num_emitters: truths[0].len(),
            scenario: scenario.into(),
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        let t = vec![vec![1, 0, 1], vec![0, 1, 1], vec![1, 1, 1], vec![0, 0, 1]];
        assert_eq!(subset_accuracy(&t, &t).unwrap(), 1.0);
        let mut p = t.clone();
        p[2] = vec![1, 0, 1];
        assert_eq!(subset_accuracy(&p, &t).unwrap(), 0.75);
        let t2 = vec![vec![1, 0], vec![0, 1]];
        let p2 = vec![vec![1, 1], vec![0, 1]];
        assert_eq!(hamming_accuracy(&p2, &t2).unwrap(), 0.75);
        assert!(subset_accuracy(&p2, &t2[..1]).is_err());
    }

    #[test]
    fn empty_prediction_is_wrong() {
        let t = vec![vec![1, 0]];
        let p = vec![vec![0, 0]];
        assert_eq!(subset_accuracy(&p, &t).unwrap(), 0.0);
        assert_eq!(hamming_accuracy(&p, &t).unwrap(), 0.5);
    }

    fn labels(k: usize, n: usize) -> impl Strategy<Value = (Vec<Vec<u8>>, Vec<Vec<u8>>)> {
        let row = prop::collection::vec(0u8..2, k);
        (prop::collection::vec(row.clone(), n), prop::collection::vec(row, n))
    }

    proptest! {
        #[test]
        fn hamming_dominates_subset_and_averages_per_emitter((p, t) in labels(4, 30)) {
            let s = subset_accuracy(&p, &t).unwrap();
            let h = hamming_accuracy(&p, &t).unwrap();
            prop_assert!(h >= s);
            let per = per_emitter_accuracy(&p, &t).unwrap();
            prop_assert!((per.iter().sum::<f64>() / 4.0 - h).abs() < 1e-12);
        }
    }
}
