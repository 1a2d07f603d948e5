use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hardware impairment parameters of one transmitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmitterProfile {
    /// I/Q gain imbalance `G` (1 means balanced).
    pub gain_imbalance: f64,
    /// I/Q phase bias in radians.
    pub phase_bias: f64,
    pub spur_amplitude: f64,
    pub spur_freq_hz: f64,
    pub carrier_leak: Complex64,
    /// PA Taylor coefficients `b_1..b_L`; `pa_coeffs[0]` multiplies the linear term.
    pub pa_coeffs: Vec<Complex64>,
}

impl EmitterProfile {
    /// A transmitter with no impairments at all.
    pub fn identity() -> Self {
        Self {
            gain_imbalance: 1.0,
            phase_bias: 0.0,
            spur_amplitude: 0.0,
            spur_freq_hz: 0.0,
            carrier_leak: Complex64::new(0.0, 0.0),
            pa_coeffs: vec![Complex64::new(1.0, 0.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pa_coeffs.is_empty() {
            return Err(Error::InvalidConfig("PA polynomial needs at least one coefficient".into()));
        }
        if !(self.gain_imbalance.is_finite() && self.gain_imbalance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gain imbalance {} must be positive",
                self.gain_imbalance
            )));
        }
        if !(self.spur_amplitude.is_finite() && self.spur_amplitude >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "spur amplitude {} must be non-negative",
                self.spur_amplitude
            )));
        }
        let finite = self.phase_bias.is_finite()
            && self.spur_freq_hz.is_finite()
            && self.carrier_leak.re.is_finite()
            && self.carrier_leak.im.is_finite()
            && self.pa_coeffs.iter().all(|b| b.re.is_finite() && b.im.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("emitter profile has non-finite fields".into()));
        }
        Ok(())
    }

    pub fn pa_order(&self) -> usize {
        self.pa_coeffs.len()
    }
}

/// The five reference transmitters (Dev1..Dev5).
///
/// Phase biases are tabulated in degrees, leakage in units of 1e-3 applied
/// to both the real and imaginary parts, spur frequencies in MHz.
pub fn table_devices() -> Vec<EmitterProfile> {
    const ROWS: [(f64, f64, f64, f64, (f64, f64), [f64; 3]); 5] = [
        (0.9998, -0.0180, 0.0082, 0.129, (1.3, 8.2), [1.00, 0.50, 0.30]),
        (1.0056, 0.0175, 0.0075, 0.132, (1.5, 7.2), [1.00, 0.08, 0.60]),
        (1.0102, 0.0120, 0.0070, 0.123, (1.1, 6.8), [1.00, 0.01, 0.01]),
        (0.9992, 0.0030, 0.0087, 0.135, (1.7, 9.0), [1.00, 0.01, 0.40]),
        (0.9982, 0.0240, 0.0090, 0.119, (2.0, 6.5), [1.00, 0.60, 0.08]),
    ];
    ROWS.iter()
        .map(|&(g, zeta_deg, a, f_mhz, (leak_re, leak_im), b)| EmitterProfile {
            gain_imbalance: g,
            phase_bias: zeta_deg.to_radians(),
            spur_amplitude: a,
            spur_freq_hz: f_mhz * 1e6,
            carrier_leak: Complex64::new(leak_re * 1e-3, leak_im * 1e-3),
            pa_coeffs: b.iter().map(|&c| Complex64::new(c, 0.0)).collect(),
        })
        .collect()
}
