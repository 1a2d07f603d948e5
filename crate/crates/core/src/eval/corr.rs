use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{label_from_class, Dataset};

/// Pearson correlations between class-average waveforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    /// Label vector of each row/column.
    pub classes: Vec<Vec<u8>>,
    pub rho: Vec<Vec<f64>>,
    /// Samples averaged per class.
    pub counts: Vec<usize>,
}

/// Mean correlation over class pairs that share an emitter and over pairs
/// that share none.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharingSummary {
    pub sharing_mean: f64,
    pub sharing_pairs: usize,
    pub disjoint_mean: f64,
    pub disjoint_pairs: usize,
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Averages up to `samples_per_class` preprocessed frames per class (in
/// dataset order, I and Q rows concatenated) and correlates the averages.
/// Classes without samples are left out.
pub fn correlation_matrix(data: &Dataset, samples_per_class: usize) -> Result<CorrelationMatrix> {
    let k = data.num_emitters;
    let n_classes = (1usize << k) - 1;
    let width = 2 * data.frame_len;
    let mut sums = vec![vec![0.0f64; width]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for s in &data.samples {
        let c = crate::signal::class_from_label(&s.label);
        if counts[c] < samples_per_class {
            counts[c] += 1;
            sums[c].iter_mut().zip(&s.channels).for_each(|(a, &v)| *a += v as f64);
        }
    }
    let present: Vec<usize> = (0..n_classes).filter(|&c| counts[c] > 0).collect();
    for c in (0..n_classes).filter(|c| counts[*c] == 0) {
        log::warn!("class {:?} has no samples; skipped", label_from_class(c, k));
    }
    if present.len() < 2 {
        return Err(Error::DegenerateInput(format!("{} classes present, need at least two", present.len())));
    }
    let means: Vec<Vec<f64>> = present
        .iter()
        .map(|&c| sums[c].iter().map(|v| v / counts[c] as f64).collect())
        .collect();
    let m = present.len();
    let mut rho = vec![vec![0.0; m]; m];
    for i in 0..m {
        rho[i][i] = 1.0;
        for j in i + 1..m {
            let r = pearson(&means[i], &means[j]);
            rho[i][j] = r;
            rho[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        classes: present.iter().map(|&c| label_from_class(c, k)).collect(),
        rho,
        counts: present.iter().map(|&c| counts[c]).collect(),
    })
}

impl CorrelationMatrix {
    pub fn sharing_summary(&self) -> SharingSummary {
        let (mut s, mut sn, mut d, mut dn) = (0.0, 0, 0.0, 0);
        for i in 0..self.classes.len() {
            for j in i + 1..self.classes.len() {
                let shares = self.classes[i].iter().zip(&self.classes[j]).any(|(&a, &b)| a == 1 && b == 1);
                if shares {
                    s += self.rho[i][j];
                    sn += 1;
                } else {
                    d += self.rho[i][j];
                    dn += 1;
                }
            }
        }
        SharingSummary {
            sharing_mean: if sn > 0 { s / sn as f64 } else { f64::NAN },
            sharing_pairs: sn,
            disjoint_mean: if dn > 0 { d / dn as f64 } else { f64::NAN },
            disjoint_pairs: dn,
        }
    }

    /// CSV with a label header row and one row per class.
    pub fn to_csv(&self) -> String {
        let name = |l: &[u8]| l.iter().map(|b| b.to_string()).collect::<String>();
        let mut out = String::from("class");
        for c in &self.classes {
            out.push(',');
            out.push_str(&name(c));
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.rho) {
            out.push_str(&name(c));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::LabeledSample;

    fn sample(label: Vec<u8>, wave: &[f32]) -> LabeledSample {
        LabeledSample { channels: wave.to_vec(), label }
    }

    #[test]
    fn symmetric_with_unit_diagonal() {
        let w1 = [1.0, 2.0, 0.5, -1.0];
        let w2 = [0.3, -0.2, 0.9, 0.1];
        let data = Dataset::new(
            2,
            2,
            vec![
                sample(vec![1, 0], &w1),
                sample(vec![0, 1], &w1),
                sample(vec![1, 1], &w2),
                sample(vec![1, 1], &w1),
            ],
        )
        .unwrap();
        let m = correlation_matrix(&data, 300).unwrap();
        assert_eq!(m.classes.len(), 3);
        assert_eq!(m.counts, vec![1, 1, 2]);
        for i in 0..3 {
            assert_eq!(m.rho[i][i], 1.0);
            for j in 0..3 {
                assert!((m.rho[i][j] - m.rho[j][i]).abs() < 1e-12);
            }
        }
        // Identical class averages.
        assert!((m.rho[0][1] - 1.0).abs() < 1e-12);
        let s = m.sharing_summary();
        assert_eq!((s.sharing_pairs, s.disjoint_pairs), (2, 1));
    }

    #[test]
    fn single_class_rejected() {
        let data = Dataset::new(2, 1, vec![sample(vec![1, 0], &[1.0, 2.0])]).unwrap();
        assert!(correlation_matrix(&data, 10).is_err());
    }
}
