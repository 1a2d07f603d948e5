use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Rician,
}

/// Flat block-fading channel plus receiver noise level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    /// Rician K-factor in dB; ignored for AWGN.
    pub rician_k_db: f64,
    pub snr_db: f64,
}

impl ChannelSpec {
    pub fn awgn(snr_db: f64) -> Self {
        Self {
            kind: ChannelKind::Awgn,
            rician_k_db: 10.0,
            snr_db,
        }
    }

    pub fn rician(k_db: f64, snr_db: f64) -> Self {
        Self {
            kind: ChannelKind::Rician,
            rician_k_db: k_db,
            snr_db,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.snr_db.is_finite() {
            return Err(Error::InvalidConfig(format!("SNR {} dB must be finite", self.snr_db)));
        }
        if self.kind == ChannelKind::Rician && !self.rician_k_db.is_finite() {
            return Err(Error::InvalidConfig("Rician K-factor must be finite".into()));
        }
        Ok(())
    }

    pub fn with_snr(&self, snr_db: f64) -> Self {
        Self {
            snr_db,
            ..self.clone()
        }
    }

    /// Draws one channel coefficient with unit mean power. The line-of-sight
    /// component has phase zero.
    pub fn draw_gain<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        match self.kind {
            ChannelKind::Awgn => Complex64::new(1.0, 0.0),
            ChannelKind::Rician => {
                let k = 10f64.powf(self.rician_k_db / 10.0);
                let los = (k / (k + 1.0)).sqrt();
                los + complex_gaussian(rng, 1.0 / (k + 1.0))
            }
        }
    }

    /// Noise power giving this SNR against a signal of power `signal_power`.
    pub fn noise_power(&self, signal_power: f64) -> f64 {
        signal_power / 10f64.powf(self.snr_db / 10.0)
    }
}

/// Circular complex Gaussian sample with total variance `variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn awgn_gain_is_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(ChannelSpec::awgn(10.0).draw_gain(&mut rng), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn rician_statistics() {
        let ch = ChannelSpec::rician(10.0, 20.0);
        let kappa = 10.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let draws: Vec<Complex64> = (0..n).map(|_| ch.draw_gain(&mut rng)).collect();
        let power = draws.iter().map(|h| h.norm_sqr()).sum::<f64>() / n as f64;
        assert!((power - 1.0).abs() < 0.02, "E|h|^2 = {power}");
        let mean = draws.iter().sum::<Complex64>() / n as f64;
        let scatter = draws.iter().map(|h| (h - mean).norm_sqr()).sum::<f64>() / n as f64;
        let ratio = mean.norm_sqr() / scatter;
        assert!((ratio - kappa).abs() < 0.05 * kappa, "K estimate {ratio}");
    }

    #[test]
    fn non_finite_rejected() {
        assert!(ChannelSpec::awgn(f64::INFINITY).validate().is_err());
        assert!(ChannelSpec::rician(f64::NAN, 3.0).validate().is_err());
        assert!(ChannelSpec {
            kind: ChannelKind::Awgn,
            rician_k_db: f64::NAN,
            snr_db: 3.0
        }
        .validate()
        .is_ok());
    }
}
