use num_complex::Complex64;

use crate::error::{Error, Result};

/// A finite, non-empty complex sample sequence at a fixed sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexFrame {
    samples: Vec<Complex64>,
    sample_rate: f64,
}

impl ComplexFrame {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidConfig("frame must contain at least one sample".into()));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidConfig(format!("sample rate {sample_rate} must be positive")));
        }
        if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::DegenerateInput(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Mean of `|s|^2` over the frame.
    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// Sub-frame `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.samples.len() {
            return Err(Error::InvalidConfig(format!(
                "window [{start}, {}) outside frame of length {}",
                start + len,
                self.samples.len()
            )));
        }
        Ok(Self {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate: self.sample_rate,
        })
    }

    pub(crate) fn map(&self, f: impl Fn(usize, Complex64) -> Complex64) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(n, &s)| f(n, s))
            .collect();
        Self::new(samples, self.sample_rate)
    }
}
