use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack below which `C` is treated as sitting on the chance-level floor.
/// Near `p = 1/M` the function is flat, so rounding noise in `C` of order
/// 1e-16 would otherwise move the inverse by ~1e-8.
const FLOOR_SLACK: f64 = 1e-13;

fn xlnx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `g(p) = ln(M-1) p + p ln p + (1-p) ln(1-p)`, in nats, with `0 ln 0 = 0`.
pub fn g(p: f64, m: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain { value: p, domain: "[0, 1]" });
    }
    if m < 2 {
        return Err(Error::InvalidConfig(format!("label cardinality {m} must be at least 2")));
    }
    Ok(((m - 1) as f64).ln() * p + xlnx(p) + xlnx(1.0 - p))
}

/// The `p` in `[1/M, 1]` with `g(p) = C`, or `1` once `C >= g(1)`.
pub fn g_inverse_upper(c: f64, m: usize) -> Result<f64> {
    let lo0 = 1.0 / m as f64;
    let floor = g(lo0, m)?;
    if c.is_nan() {
        return Err(Error::Domain { value: c, domain: "finite C" });
    }
    if c < floor - FLOOR_SLACK {
        return Err(Error::Branch { c, floor });
    }
    if c <= floor + FLOOR_SLACK {
        return Ok(lo0);
    }
    if c >= g(1.0, m)? {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (lo0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = g(mid, m)?;
        if (v - c).abs() < 1e-12 {
            return Ok(mid);
        }
        if v < c {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Quantities entering the bound, all in nats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Number of admissible label vectors, `2^K - 1`.
    pub label_cardinality: usize,
    pub entropy: f64,
    pub mutual_info: f64,
}

impl BoundInputs {
    pub fn uniform(num_emitters: usize, mutual_info: f64) -> Self {
        let m = (1usize << num_emitters) - 1;
        Self { label_cardinality: m, entropy: (m as f64).ln(), mutual_info }
    }

    pub fn validate(&self) -> Result<()> {
        if self.label_cardinality < 2 {
            return Err(Error::InvalidConfig(format!(
                "label cardinality {} must be at least 2",
                self.label_cardinality
            )));
        }
        if !(self.entropy >= 0.0 && self.entropy.is_finite()) {
            return Err(Error::Domain { value: self.entropy, domain: "entropy >= 0" });
        }
        if !(self.mutual_info >= 0.0 && self.mutual_info <= self.entropy + 1e-9) {
            return Err(Error::Domain { value: self.mutual_info, domain: "0 <= I <= H" });
        }
        Ok(())
    }

    /// `C = ln(M-1) - H + I`.
    pub fn capacity(&self) -> f64 {
        ((self.label_cardinality - 1) as f64).ln() - self.entropy + self.mutual_info
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub c: f64,
    pub subset_bound: f64,
    pub hamming_bound: f64,
}

/// Chance level `1/M` while `C <= g(1/M)`, otherwise `min(1, g^{-1}(C))`.
pub fn subset_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let m = inputs.label_cardinality;
    let c = inputs.capacity();
    if c <= g(1.0 / m as f64, m)? + FLOOR_SLACK {
        Ok(1.0 / m as f64)
    } else {
        Ok(g_inverse_upper(c, m)?.min(1.0))
    }
}

/// Per-label accuracy bound under equal per-label accuracy: the `K`-th root.
pub fn hamming_bound(subset: f64, num_emitters: usize) -> Result<f64> {
    if !(subset > 0.0 && subset <= 1.0) {
        return Err(Error::Domain { value: subset, domain: "(0, 1]" });
    }
    if num_emitters == 0 {
        return Err(Error::InvalidConfig("at least one emitter is required".into()));
    }
    Ok(subset.powf(1.0 / num_emitters as f64))
}

pub fn compute_bounds(inputs: &BoundInputs, num_emitters: usize) -> Result<BoundReport> {
    let s = subset_bound(inputs)?;
    Ok(BoundReport { c: inputs.capacity(), subset_bound: s, hamming_bound: hamming_bound(s, num_emitters)? })
}

/// Plug-in entropy (nats) of the empirical label distribution.
pub fn empirical_entropy(labels: &[Vec<u8>]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::DegenerateInput("entropy of an empty label set".into()));
    }
    let mut counts: HashMap<&[u8], usize> = HashMap::new();
    for l in labels {
        *counts.entry(l.as_slice()).or_default() += 1;
    }
    let n = labels.len() as f64;
    let mut keys: Vec<_> = counts.into_iter().collect();
    keys.sort();
    Ok(-keys.iter().map(|(_, c)| xlnx(*c as f64 / n)).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::label_combinations;
    use proptest::prelude::*;

    #[test]
    fn g_reference_values() {
        assert!((g(1.0 / 7.0, 7).unwrap() - (6.0f64 / 7.0).ln()).abs() < 1e-12);
        assert!((g(1.0 / 7.0, 7).unwrap() + 0.154151).abs() < 1e-6);
        assert!((g(1.0, 7).unwrap() - 1.791759).abs() < 1e-6);
        assert!((g(0.5, 7).unwrap() - 0.202733).abs() < 1e-6);
        assert_eq!(g(0.0, 7).unwrap(), 0.0);
        assert!(g(1.2, 7).is_err());
        assert!(g(-0.1, 7).is_err());
    }

    #[test]
    fn g_is_strictly_convex() {
        let h = 1e-3;
        let mut p = h;
        while p + h < 1.0 {
            let d2 = g(p + h, 7).unwrap() - 2.0 * g(p, 7).unwrap() + g(p - h, 7).unwrap();
            assert!(d2 > 0.0, "p = {p}");
            p += h;
        }
    }

    #[test]
    fn inverse_cases() {
        let m = 7;
        let floor = g(1.0 / 7.0, m).unwrap();
        assert_eq!(g_inverse_upper(floor, m).unwrap(), 1.0 / 7.0);
        assert_eq!(g_inverse_upper(6f64.ln(), m).unwrap(), 1.0);
        assert_eq!(g_inverse_upper(5.0, m).unwrap(), 1.0);
        for c in [0.0, 0.5, 1.0] {
            let p = g_inverse_upper(c, m).unwrap();
            assert!((g(p, m).unwrap() - c).abs() < 1e-9, "C = {c}");
            assert!(p >= 1.0 / 7.0);
        }
        assert!(matches!(g_inverse_upper(-1.0, m), Err(Error::Branch { .. })));
    }

    #[test]
    fn subset_bound_extremes() {
        for k in 2..=5 {
            let m = (1usize << k) - 1;
            let chance = subset_bound(&BoundInputs::uniform(k, 0.0)).unwrap();
            assert!((chance - 1.0 / m as f64).abs() < 1e-9);
            let full = BoundInputs::uniform(k, (m as f64).ln());
            assert!((full.capacity() - g(1.0, m).unwrap()).abs() < 1e-12);
            assert!((subset_bound(&full).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn subset_bound_monotone_and_continuous() {
        let h = 7f64.ln();
        let mut prev = 0.0;
        for i in 0..100 {
            let b = subset_bound(&BoundInputs::uniform(3, h * i as f64 / 99.0)).unwrap();
            assert!(b >= prev);
            prev = b;
        }
        // Just either side of the case boundary.
        let base = BoundInputs::uniform(3, 0.0);
        let below = subset_bound(&base).unwrap();
        let above = subset_bound(&BoundInputs { mutual_info: 2e-13, ..base }).unwrap();
        assert!((above - below).abs() < 1e-6);
    }

    #[test]
    fn hamming_root() {
        assert!((hamming_bound(0.729, 3).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(hamming_bound(1.0, 5).unwrap(), 1.0);
        assert_eq!(hamming_bound(0.4, 1).unwrap(), 0.4);
        assert!(hamming_bound(0.0, 2).is_err());
    }

    #[test]
    fn entropy_examples() {
        let uniform: Vec<Vec<u8>> = label_combinations(3).into_iter().cycle().take(70).collect();
        assert!((empirical_entropy(&uniform).unwrap() - 7f64.ln()).abs() < 1e-12);
        assert_eq!(empirical_entropy(&vec![vec![1, 0]; 5]).unwrap(), 0.0);
        assert!(empirical_entropy(&[]).is_err());
    }

    proptest! {
        #[test]
        fn entropy_at_most_log_m(classes in prop::collection::vec(0usize..7, 1..200)) {
            let labels: Vec<Vec<u8>> = classes.iter().map(|&c| crate::signal::label_from_class(c, 3)).collect();
            prop_assert!(empirical_entropy(&labels).unwrap() <= 7f64.ln() + 1e-12);
        }

        #[test]
        fn hamming_dominates_subset(i in 0.0f64..1.0, k in 1usize..6) {
            let m = (1usize << k) - 1;
            prop_assume!(m >= 2);
            let r = compute_bounds(&BoundInputs::uniform(k, i * (m as f64).ln()), k).unwrap();
            prop_assert!(r.hamming_bound >= r.subset_bound);
            prop_assert!((r.hamming_bound - r.subset_bound.powf(1.0 / k as f64)).abs() < 1e-12);
        }
    }
}
