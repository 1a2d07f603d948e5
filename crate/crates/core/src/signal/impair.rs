//! Transmitter impairment chain.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{ComplexFrame, EmitterProfile};
use crate::error::{Error, Result};

/// Mixing coefficients `(mu, nu)` of an I/Q modulator with gain imbalance
/// `gain` and phase bias `phase` (radians).
pub fn iq_mixing_coeffs(gain: f64, phase: f64) -> (Complex64, Complex64) {
    let (s, c) = (phase / 2.0).sin_cos();
    let mu = Complex64::new(0.5 * (gain + 1.0) * c, 0.5 * (gain - 1.0) * s);
    let nu = Complex64::new(0.5 * (gain - 1.0) * c, 0.5 * (gain + 1.0) * s);
    (mu, nu)
}

/// `x' = mu x + nu x*`.
pub fn apply_iq_imbalance(x: &ComplexFrame, gain: f64, phase: f64) -> Result<ComplexFrame> {
    if !(gain.is_finite() && phase.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "I/Q imbalance parameters must be finite (G = {gain}, phase = {phase})"
        )));
    }
    let (mu, nu) = iq_mixing_coeffs(gain, phase);
    x.map(|_, s| mu * s + nu * s.conj())
}

/// Adds carrier leakage, shifts to the digital IF and adds the spurious tone:
/// `(x' + leak) e^{j 2 pi f_if t} + a e^{j 2 pi (f_if + f_spur) t}` with `t = n / fs`.
pub fn apply_if_spur_leak(
    x: &ComplexFrame,
    leak: Complex64,
    f_if: f64,
    spur_amplitude: f64,
    spur_freq: f64,
) -> Result<ComplexFrame> {
    let fs = x.sample_rate();
    if !(f_if.is_finite() && spur_freq.is_finite() && spur_amplitude.is_finite()) {
        return Err(Error::InvalidConfig("IF/spur parameters must be finite".into()));
    }
    if f_if.abs() + spur_freq.abs() >= fs / 2.0 {
        return Err(Error::InvalidConfig(format!(
            "|f_if| + |f_spur| = {} Hz aliases at sample rate {fs} Hz",
            f_if.abs() + spur_freq.abs()
        )));
    }
    let w_if = 2.0 * PI * f_if / fs;
    let w_spur = 2.0 * PI * (f_if + spur_freq) / fs;
    x.map(|n, s| {
        let n = n as f64;
        (s + leak) * Complex64::from_polar(1.0, w_if * n)
            + Complex64::from_polar(spur_amplitude, w_spur * n)
    })
}

/// Memoryless PA polynomial `sum_l b_l x^l`, `coeffs[0] = b_1`.
pub fn apply_pa_nonlinearity(x: &ComplexFrame, coeffs: &[Complex64]) -> Result<ComplexFrame> {
    if coeffs.is_empty() {
        return Err(Error::InvalidConfig("PA polynomial needs at least one coefficient".into()));
    }
    x.map(|_, s| {
        // Horner on b_1 + b_2 x + ... then one more multiply by x.
        let inner = coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &b| acc * s + b);
        inner * s
    })
}

/// Full device distortion: I/Q imbalance, then IF/leak/spur, then PA.
pub fn distort(x: &ComplexFrame, profile: &EmitterProfile, f_if: f64) -> Result<ComplexFrame> {
    profile.validate()?;
    let x1 = apply_iq_imbalance(x, profile.gain_imbalance, profile.phase_bias)?;
    let x2 = apply_if_spur_leak(
        &x1,
        profile.carrier_leak,
        f_if,
        profile.spur_amplitude,
        profile.spur_freq_hz,
    )?;
    apply_pa_nonlinearity(&x2, &profile.pa_coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{make_qpsk_baseband, table_devices, WaveformParams};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn frame(samples: Vec<Complex64>) -> ComplexFrame {
        ComplexFrame::new(samples, 120e6).unwrap()
    }

    fn burst(seed: u64) -> ComplexFrame {
        make_qpsk_baseband(100, &WaveformParams::default(), &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
            .frame
    }

    // Scalar re-derivation kept independent of iq_mixing_coeffs.
    fn mu_nu_oracle(g: f64, z: f64) -> (f64, f64, f64, f64) {
        let half = z / 2.0;
        (
            (g + 1.0) / 2.0 * half.cos(),
            (g - 1.0) / 2.0 * half.sin(),
            (g - 1.0) / 2.0 * half.cos(),
            (g + 1.0) / 2.0 * half.sin(),
        )
    }

    #[test]
    fn balanced_modulator_is_identity() {
        let (mu, nu) = iq_mixing_coeffs(1.0, 0.0);
        assert_eq!(mu, c(1.0, 0.0));
        assert_eq!(nu, c(0.0, 0.0));
        let x = burst(1);
        assert_eq!(apply_iq_imbalance(&x, 1.0, 0.0).unwrap(), x);
    }

    #[test]
    fn dev1_mixing_coefficients() {
        let dev1 = &table_devices()[0];
        let (mu, nu) = iq_mixing_coeffs(dev1.gain_imbalance, dev1.phase_bias);
        let (mr, mi, nr, ni) = mu_nu_oracle(0.9998, -0.0180 * PI / 180.0);
        assert!((mu.re - mr).abs() < 1e-15 && (mu.im - mi).abs() < 1e-15);
        assert!((nu.re - nr).abs() < 1e-15 && (nu.im - ni).abs() < 1e-15);
        // Magnitudes: mu ~ 0.9999, nu ~ 1.9e-4 in this regime.
        assert!((mu.norm() - 0.9999).abs() < 1e-6);
        assert!(nu.norm() < 2.5e-4);
    }

    #[test]
    fn constant_input_gain_three() {
        let x = frame(vec![c(1.0, 0.0); 8]);
        let (mu, nu) = iq_mixing_coeffs(3.0, 0.0);
        assert_eq!((mu, nu), (c(2.0, 0.0), c(1.0, 0.0)));
        let y = apply_iq_imbalance(&x, 3.0, 0.0).unwrap();
        for s in y.samples() {
            assert!((s - c(3.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn non_finite_imbalance_rejected() {
        assert!(apply_iq_imbalance(&burst(2), f64::NAN, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn mixing_matches_scalar_oracle(g in 0.5f64..1.5, z in -0.5f64..0.5) {
            let (mu, nu) = iq_mixing_coeffs(g, z);
            let (mr, mi, nr, ni) = mu_nu_oracle(g, z);
            prop_assert!((mu.re - mr).abs() < 1e-14 && (mu.im - mi).abs() < 1e-14);
            prop_assert!((nu.re - nr).abs() < 1e-14 && (nu.im - ni).abs() < 1e-14);
        }
    }

    #[test]
    fn if_stage_vanishes_when_everything_is_zero() {
        let x = burst(3);
        assert_eq!(apply_if_spur_leak(&x, c(0.0, 0.0), 0.0, 0.0, 0.0).unwrap(), x);
    }

    #[test]
    fn pure_spur_has_unit_modulus() {
        let x = frame(vec![c(0.0, 0.0); 256]);
        let y = apply_if_spur_leak(&x, c(0.0, 0.0), 13e6, 1.0, 0.129e6).unwrap();
        for s in y.samples() {
            assert!((s.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn leak_only_has_constant_modulus() {
        let leak = c(1.3e-3, 8.2e-3);
        let x = frame(vec![c(0.0, 0.0); 256]);
        let y = apply_if_spur_leak(&x, leak, -26e6, 0.0, 0.0).unwrap();
        for s in y.samples() {
            assert!((s.norm() - leak.norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn aliasing_if_rejected() {
        let x = burst(4);
        let err = apply_if_spur_leak(&x, c(0.0, 0.0), 59.95e6, 0.1, 0.1e6).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn pa_polynomials() {
        let x = burst(5);
        let id = apply_pa_nonlinearity(&x, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(id, x);

        let two = frame(vec![c(2.0, 0.0); 4]);
        let sq = apply_pa_nonlinearity(&two, &[c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert!(sq.samples().iter().all(|s| (s - c(4.0, 0.0)).norm() < 1e-15));

        let one = frame(vec![c(1.0, 0.0); 4]);
        let dev3 = &table_devices()[2];
        let y = apply_pa_nonlinearity(&one, &dev3.pa_coeffs).unwrap();
        assert!(y.samples().iter().all(|s| (s - c(1.02, 0.0)).norm() < 1e-12));

        assert!(apply_pa_nonlinearity(&one, &[]).is_err());
    }

    #[test]
    fn pa_matches_explicit_power_sum() {
        let x = burst(6);
        let b = [c(1.0, 0.1), c(0.3, -0.2), c(0.05, 0.02)];
        let y = apply_pa_nonlinearity(&x, &b).unwrap();
        for (s, o) in x.samples().iter().zip(y.samples()) {
            let expect = b[0] * s + b[1] * s.powu(2) + b[2] * s.powu(3);
            assert!((expect - o).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_profile_reproduces_input() {
        let x = burst(7);
        let y = distort(&x, &EmitterProfile::identity(), 0.0).unwrap();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).norm() <= 1e-12 * a.norm().max(1e-300));
        }
    }

    #[test]
    fn distinct_devices_give_distinct_outputs() {
        let x = burst(8);
        let devs = table_devices();
        let a = distort(&x, &devs[0], 13e6).unwrap();
        let b = distort(&x, &devs[1], 13e6).unwrap();
        let differ = a
            .samples()
            .iter()
            .zip(b.samples())
            .filter(|(p, q)| (*p - *q).norm() > 1e-9)
            .count();
        assert!(differ as f64 >= 0.99 * x.len() as f64);
    }

    #[test]
    fn linear_pa_scaling_identity() {
        // With b = [1]: distort(alpha x) = alpha distort(x) - (alpha - 1)(leak + spur).
        let x = burst(9);
        let mut p = table_devices()[3].clone();
        p.pa_coeffs = vec![c(1.0, 0.0)];
        let f_if = 26e6;
        let alpha = 1.7;
        let scaled = frame(x.samples().iter().map(|s| s * alpha).collect());
        let lhs = distort(&scaled, &p, f_if).unwrap();
        let base = distort(&x, &p, f_if).unwrap();
        let zeros = frame(vec![c(0.0, 0.0); x.len()]);
        let additive = apply_if_spur_leak(&zeros, p.carrier_leak, f_if, p.spur_amplitude, p.spur_freq_hz).unwrap();
        for n in 0..x.len() {
            let rhs = base.samples()[n] * alpha - additive.samples()[n] * (alpha - 1.0);
            assert!((lhs.samples()[n] - rhs).norm() < 1e-12);
        }
    }
}
