use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::check_label;
use super::{ChannelSpec, ComplexFrame, ScenarioConfig};
use crate::error::{Error, Result};

/// Every non-empty activity pattern of `k` emitters, in class order.
///
/// Class `c` (0-based) corresponds to the bit pattern of `c + 1`, with bit
/// `m` giving the state of emitter `m`.
pub fn label_combinations(k: usize) -> Vec<Vec<u8>> {
    (0..(1usize << k) - 1).map(|c| label_from_class(c, k)).collect()
}

pub fn label_from_class(class: usize, k: usize) -> Vec<u8> {
    let code = class + 1;
    (0..k).map(|m| ((code >> m) & 1) as u8).collect()
}

pub fn class_from_label(label: &[u8]) -> usize {
    let code = label
        .iter()
        .enumerate()
        .fold(0usize, |acc, (m, &b)| acc | ((b as usize & 1) << m));
    code.wrapping_sub(1)
}

/// Draws a label uniformly from the non-empty patterns.
pub fn random_label<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<u8> {
    label_from_class(rng.random_range(0..(1usize << k) - 1), k)
}

/// Per-channel (I, Q) mean and standard deviation of energy-normalized
/// training frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalStats {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

fn energy_normalize(frame: &ComplexFrame) -> Result<Vec<Complex64>> {
    let p = frame.mean_power();
    if !(p > 0.0) {
        return Err(Error::DegenerateInput("frame has zero energy".into()));
    }
    let s = p.sqrt().recip();
    Ok(frame.samples().iter().map(|x| x * s).collect())
}

pub fn fit_global_stats(frames: &[ComplexFrame]) -> Result<GlobalStats> {
    if frames.is_empty() {
        return Err(Error::DegenerateInput("no frames to fit statistics on".into()));
    }
    let mut sum = [0.0f64; 2];
    let mut sq = [0.0f64; 2];
    let mut n = 0usize;
    for f in frames {
        for s in energy_normalize(f)? {
            sum[0] += s.re;
            sum[1] += s.im;
            sq[0] += s.re * s.re;
            sq[1] += s.im * s.im;
        }
        n += f.len();
    }
    let n = n as f64;
    let mean = [sum[0] / n, sum[1] / n];
    let std = [
        (sq[0] / n - mean[0] * mean[0]).max(0.0).sqrt(),
        (sq[1] / n - mean[1] * mean[1]).max(0.0).sqrt(),
    ];
    if !(std[0] > 0.0 && std[1] > 0.0) {
        return Err(Error::DegenerateInput("a channel has zero variance".into()));
    }
    Ok(GlobalStats { mean, std })
}

/// Energy normalization followed by global I/Q standardization.
/// Returns `2 * T` values: the I row then the Q row.
pub fn preprocess(frame: &ComplexFrame, stats: &GlobalStats) -> Result<Vec<f32>> {
    let y = energy_normalize(frame)?;
    let t = y.len();
    let mut out = vec![0f32; 2 * t];
    for (n, s) in y.iter().enumerate() {
        out[n] = ((s.re - stats.mean[0]) / stats.std[0]) as f32;
        out[t + n] = ((s.im - stats.mean[1]) / stats.std[1]) as f32;
    }
    Ok(out)
}

/// A preprocessed dual-channel frame and its activity label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    /// `2 x T`, row-major (I row, then Q row).
    pub channels: Vec<f32>,
    pub label: Vec<u8>,
}

/// Synthesizes one frame for `label` and preprocesses it with `stats`.
pub fn synth_sample<R: Rng + ?Sized>(
    label: &[u8],
    cfg: &ScenarioConfig,
    channel: &ChannelSpec,
    if_config: usize,
    stats: &GlobalStats,
    rng: &mut R,
) -> Result<LabeledSample> {
    let frame = cfg.receive(label, channel, if_config, rng)?.received()?;
    Ok(LabeledSample {
        channels: preprocess(&frame, stats)?,
        label: label.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_emitters: usize,
    pub frame_len: usize,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(num_emitters: usize, frame_len: usize, samples: Vec<LabeledSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.channels.len() != 2 * frame_len {
                return Err(Error::Dimension(format!(
                    "sample {i} has {} values, expected {}",
                    s.channels.len(),
                    2 * frame_len
                )));
            }
            check_label(&s.label, num_emitters)?;
        }
        Ok(Self {
            num_emitters,
            frame_len,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<Vec<u8>> {
        self.samples.iter().map(|s| s.label.clone()).collect()
    }

    /// Stacks the selected samples into a `B x 2 x T` buffer.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f32>, Vec<Vec<u8>>) {
        let mut x = Vec::with_capacity(indices.len() * 2 * self.frame_len);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(&self.samples[i].channels);
            y.push(self.samples[i].label.clone());
        }
        (x, y)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; (1usize << self.num_emitters) - 1];
        for s in &self.samples {
            counts[class_from_label(&s.label)] += 1;
        }
        counts
    }
}

/// Train/validation/test splits sharing training-set preprocessing statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub stats: GlobalStats,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Val,
    Test,
}

/// Builds a 4:1:1 split with `samples_per_combo` frames for every non-empty
/// label pattern. Within a pattern, sample `s` uses IF configuration
/// `s mod n_configs`. Each split is shuffled with a seeded permutation.
pub fn build_dataset(
    cfg: &ScenarioConfig,
    channel: &ChannelSpec,
    samples_per_combo: usize,
) -> Result<SplitDataset> {
    cfg.validate()?;
    channel.validate()?;
    if samples_per_combo < 6 {
        return Err(Error::InvalidConfig(format!(
            "samples_per_combo = {samples_per_combo} cannot fill a 4:1:1 split"
        )));
    }
    let k = cfg.num_emitters;
    let n_train = samples_per_combo * 4 / 6;
    let n_val = samples_per_combo / 6;
    let combos = label_combinations(k);
    let n_cfg = cfg.if_configs.len();

    let jobs: Vec<(usize, usize)> = (0..combos.len())
        .flat_map(|c| (0..samples_per_combo).map(move |s| (c, s)))
        .collect();
    let frames: Vec<(Split, ComplexFrame, Vec<u8>)> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            rng.set_stream((c * samples_per_combo + s) as u64);
            let label = &combos[c];
            let frame = cfg.receive(label, channel, s % n_cfg, &mut rng)?.received()?;
            let split = if s < n_train {
                Split::Train
            } else if s < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            Ok((split, frame, label.clone()))
        })
        .collect::<Result<_>>()?;

    let train_frames: Vec<ComplexFrame> = frames
        .iter()
        .filter(|(sp, _, _)| *sp == Split::Train)
        .map(|(_, f, _)| f.clone())
        .collect();
    let stats = fit_global_stats(&train_frames)?;

    let processed: Vec<(Split, LabeledSample)> = frames
        .par_iter()
        .map(|(sp, f, label)| {
            Ok((
                *sp,
                LabeledSample {
                    channels: preprocess(f, &stats)?,
                    label: label.clone(),
                },
            ))
        })
        .collect::<Result<_>>()?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x5eed_5eed_5eed_5eed);
    let mut take = |which: Split| -> Result<Dataset> {
        let mut samples: Vec<LabeledSample> = processed
            .iter()
            .filter(|(sp, _)| *sp == which)
            .map(|(_, s)| s.clone())
            .collect();
        samples.shuffle(&mut shuffle_rng);
        Dataset::new(k, cfg.frame_len, samples)
    };
    Ok(SplitDataset {
        train: take(Split::Train)?,
        val: take(Split::Val)?,
        test: take(Split::Test)?,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Overlap;

    fn small_cfg(overlap: Overlap) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::reference(3, overlap, 17).unwrap();
        cfg.frame_len = 128;
        cfg
    }

    #[test]
    fn class_label_bijection() {
        for k in 1..=6 {
            let combos = label_combinations(k);
            assert_eq!(combos.len(), (1 << k) - 1);
            for (c, l) in combos.iter().enumerate() {
                assert!(l.contains(&1));
                assert_eq!(class_from_label(l), c);
            }
        }
        assert_eq!(label_from_class(0, 3), vec![1, 0, 0]);
        assert_eq!(label_from_class(6, 3), vec![1, 1, 1]);
    }

    #[test]
    fn split_sizes_and_balance() {
        let cfg = small_cfg(Overlap::None);
        let ds = build_dataset(&cfg, &ChannelSpec::awgn(10.0), 60).unwrap();
        assert_eq!(ds.train.len(), 280);
        assert_eq!(ds.val.len(), 70);
        assert_eq!(ds.test.len(), 70);
        assert!(ds.train.class_counts().iter().all(|&c| c == 40));
        assert!(ds.test.class_counts().iter().all(|&c| c == 10));
    }

    #[test]
    fn too_few_samples_rejected() {
        let cfg = small_cfg(Overlap::None);
        assert!(build_dataset(&cfg, &ChannelSpec::awgn(10.0), 5).is_err());
    }

    #[test]
    fn training_split_is_standardized() {
        let cfg = small_cfg(Overlap::Half);
        let ds = build_dataset(&cfg, &ChannelSpec::awgn(6.0), 12).unwrap();
        let t = cfg.frame_len;
        for ch in 0..2 {
            let vals: Vec<f64> = ds
                .train
                .samples
                .iter()
                .flat_map(|s| s.channels[ch * t..(ch + 1) * t].iter().map(|&v| v as f64))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-6, "channel {ch} mean {mean}");
            assert!((std - 1.0).abs() < 1e-3, "channel {ch} std {std}");
        }
    }

    #[test]
    fn test_frames_use_training_statistics() {
        let cfg = small_cfg(Overlap::Half);
        let ch = ChannelSpec::awgn(0.0);
        let ds = build_dataset(&cfg, &ch, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let frames: Vec<ComplexFrame> = (0..3)
            .map(|i| cfg.receive(&[1, 0, 1], &ch, i, &mut rng).unwrap().received().unwrap())
            .collect();
        let own = fit_global_stats(&frames).unwrap();
        assert_ne!(own, ds.stats);
        let with_train = preprocess(&frames[0], &ds.stats).unwrap();
        let with_own = preprocess(&frames[0], &own).unwrap();
        assert_ne!(with_train, with_own);
    }

    #[test]
    fn zero_frame_is_degenerate() {
        let zero = ComplexFrame::new(vec![Complex64::new(0.0, 0.0); 16], 120e6).unwrap();
        let stats = GlobalStats {
            mean: [0.0; 2],
            std: [1.0; 2],
        };
        assert!(matches!(preprocess(&zero, &stats), Err(Error::DegenerateInput(_))));
        assert!(fit_global_stats(&[zero]).is_err());
    }

    #[test]
    fn dataset_is_deterministic() {
        let cfg = small_cfg(Overlap::Full);
        let a = build_dataset(&cfg, &ChannelSpec::awgn(3.0), 6).unwrap();
        let b = build_dataset(&cfg, &ChannelSpec::awgn(3.0), 6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_label_sampler_passes_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 14_000;
        let mut counts = [0usize; 7];
        for _ in 0..n {
            let l = random_label(3, &mut rng);
            assert!(l.contains(&1));
            counts[class_from_label(&l)] += 1;
        }
        let e = n as f64 / 7.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99th percentile of chi-square with 6 degrees of freedom.
        assert!(chi2 < 16.812, "chi2 = {chi2}");
    }

    #[test]
    fn synth_sample_shape() {
        let cfg = small_cfg(Overlap::None);
        let stats = GlobalStats {
            mean: [0.0; 2],
            std: [0.7; 2],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = synth_sample(&[0, 1, 1], &cfg, &ChannelSpec::awgn(20.0), 3, &stats, &mut rng).unwrap();
        assert_eq!(s.channels.len(), 256);
        assert!(synth_sample(&[0, 0, 0], &cfg, &ChannelSpec::awgn(20.0), 3, &stats, &mut rng).is_err());
    }
}
