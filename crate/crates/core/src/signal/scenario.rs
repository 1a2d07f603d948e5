use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    complex_gaussian, distort, make_qpsk_baseband, table_devices, ChannelKind, ChannelSpec,
    ComplexFrame, EmitterProfile, WaveformParams,
};
use crate::error::{Error, Result};

/// Spectral overlap between adjacent emitters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Overlap {
    #[serde(rename = "0%")]
    None,
    #[serde(rename = "50%")]
    Half,
    #[serde(rename = "100%")]
    Full,
}

impl Overlap {
    pub fn percent(self) -> u32 {
        match self {
            Overlap::None => 0,
            Overlap::Half => 50,
            Overlap::Full => 100,
        }
    }
}

impl std::fmt::Display for Overlap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}%", self.percent())
    }
}

impl std::str::FromStr for Overlap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_end_matches('%') {
            "0" => Ok(Overlap::None),
            "50" => Ok(Overlap::Half),
            "100" => Ok(Overlap::Full),
            other => Err(Error::InvalidConfig(format!("unknown overlap level {other:?}"))),
        }
    }
}

const MHZ: f64 = 1e6;

/// Digital IF offsets (Hz, relative to the 2.44 GHz band centre), one row per
/// configuration, one column per emitter.
///
/// For three emitters these are the tabulated configurations: the six
/// orderings of {-26, 0, +26} MHz at 0% overlap, of {-13, 0, +13} MHz at 50%,
/// and five common carriers at 100%. Other emitter counts use the same
/// spacing centred on the band, with every ordering (K <= 6) or the K cyclic
/// rotations (K > 6); the 100% carriers are reused as-is.
pub fn if_configurations(overlap: Overlap, num_emitters: usize) -> Vec<Vec<f64>> {
    if overlap == Overlap::Full {
        return [-13.0, 13.0, 0.0, -26.0, 26.0]
            .iter()
            .map(|&f| vec![f * MHZ; num_emitters])
            .collect();
    }
    let spacing = match overlap {
        Overlap::None => 26.0,
        _ => 13.0,
    };
    let center = (num_emitters as f64 - 1.0) / 2.0;
    let base: Vec<f64> = (0..num_emitters)
        .map(|m| (m as f64 - center) * spacing * MHZ)
        .collect();
    if num_emitters <= 6 {
        permutations(&base)
    } else {
        (0..num_emitters)
            .map(|r| (0..num_emitters).map(|m| base[(m + r) % num_emitters]).collect())
            .collect()
    }
}

/// All orderings of `items` in lexicographic order of positions.
fn permutations(items: &[f64]) -> Vec<Vec<f64>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Everything needed to synthesize frames for one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_emitters: usize,
    pub profiles: Vec<EmitterProfile>,
    pub overlap: Overlap,
    /// Per-configuration IF offsets in Hz; every row has `num_emitters` entries.
    pub if_configs: Vec<Vec<f64>>,
    /// Steady-state frame length `T` in samples.
    pub frame_len: usize,
    pub waveform: WaveformParams,
    pub rng_seed: u64,
}

impl ScenarioConfig {
    /// Reference devices Dev1..DevK with the standard IF plan for `overlap`.
    pub fn reference(num_emitters: usize, overlap: Overlap, rng_seed: u64) -> Result<Self> {
        let devices = table_devices();
        if num_emitters > devices.len() {
            return Err(Error::InvalidConfig(format!(
                "only {} reference devices exist; supply profiles for K = {num_emitters}",
                devices.len()
            )));
        }
        let cfg = Self {
            num_emitters,
            profiles: devices[..num_emitters].to_vec(),
            overlap,
            if_configs: if_configurations(overlap, num_emitters),
            frame_len: 1024,
            waveform: WaveformParams::default(),
            rng_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_emitters;
        if k < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 emitters, got {k}")));
        }
        if self.profiles.len() != k {
            return Err(Error::InvalidConfig(format!(
                "{} profiles supplied for {k} emitters",
                self.profiles.len()
            )));
        }
        if self.if_configs.is_empty() {
            return Err(Error::InvalidConfig("at least one IF configuration is required".into()));
        }
        if let Some(row) = self.if_configs.iter().find(|r| r.len() != k) {
            return Err(Error::InvalidConfig(format!(
                "IF configuration has {} offsets for {k} emitters",
                row.len()
            )));
        }
        if self.frame_len == 0 {
            return Err(Error::InvalidConfig("frame length must be positive".into()));
        }
        self.waveform.validate()?;
        let nyquist = self.waveform.sample_rate_hz / 2.0;
        for p in &self.profiles {
            p.validate()?;
            for row in &self.if_configs {
                for f in row {
                    if f.abs() + p.spur_freq_hz.abs() >= nyquist {
                        return Err(Error::InvalidConfig(format!(
                            "IF offset {f} Hz plus spur {} Hz exceeds Nyquist",
                            p.spur_freq_hz
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_combinations(&self) -> usize {
        (1usize << self.num_emitters) - 1
    }

    /// Synthesizes one received frame, keeping the noiseless superposition and
    /// the noise separate.
    pub fn receive<R: Rng + ?Sized>(
        &self,
        label: &[u8],
        channel: &ChannelSpec,
        if_config: usize,
        rng: &mut R,
    ) -> Result<Reception> {
        check_label(label, self.num_emitters)?;
        channel.validate()?;
        let offsets = self.if_configs.get(if_config).ok_or_else(|| {
            Error::InvalidConfig(format!("IF configuration {if_config} does not exist"))
        })?;
        let num_symbols = self.waveform.symbols_for(self.frame_len);
        let mut clean = vec![Complex64::new(0.0, 0.0); self.frame_len];
        for (m, _) in label.iter().enumerate().filter(|(_, &b)| b == 1) {
            let burst = make_qpsk_baseband(num_symbols, &self.waveform, rng)?;
            let distorted = distort(&burst.frame, &self.profiles[m], offsets[m])?;
            let h = channel.draw_gain(rng);
            let start = burst.transient;
            for (acc, s) in clean
                .iter_mut()
                .zip(&distorted.samples()[start..start + self.frame_len])
            {
                *acc += h * s;
            }
        }
        let signal_power =
            clean.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.frame_len as f64;
        let noise_var = channel.noise_power(signal_power);
        let noise = (0..self.frame_len)
            .map(|_| complex_gaussian(rng, noise_var))
            .collect();
        Ok(Reception {
            clean,
            noise,
            sample_rate: self.waveform.sample_rate_hz,
        })
    }
}

pub(crate) fn check_label(label: &[u8], k: usize) -> Result<()> {
    if label.len() != k {
        return Err(Error::Dimension(format!("label has {} bits, expected {k}", label.len())));
    }
    if label.iter().any(|&b| b > 1) {
        return Err(Error::InvalidConfig("label bits must be 0 or 1".into()));
    }
    if label.iter().all(|&b| b == 0) {
        return Err(Error::InvalidConfig(
            "the all-zero label (no active emitter) is not part of the label space".into(),
        ));
    }
    Ok(())
}

/// Noiseless superposition and the noise realization of one frame.
#[derive(Clone, Debug)]
pub struct Reception {
    pub clean: Vec<Complex64>,
    pub noise: Vec<Complex64>,
    pub sample_rate: f64,
}

impl Reception {
    pub fn received(&self) -> Result<ComplexFrame> {
        let y = self.clean.iter().zip(&self.noise).map(|(s, w)| s + w).collect();
        ComplexFrame::new(y, self.sample_rate)
    }
}

/// On-disk scenario description (TOML).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub signal: SignalSection,
    pub scenario: ScenarioSection,
    /// Transmitter rows; defaults to Dev1..DevK when omitted.
    #[serde(default, rename = "device")]
    pub devices: Vec<DeviceSection>,
    /// Optional explicit IF plan in MHz offsets from the band centre.
    #[serde(default)]
    pub if_configurations_mhz: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSection {
    pub sampling_rate_mhz: f64,
    pub symbol_rate_mhz: f64,
    pub oversampling_ratio: usize,
    pub rrc_rolloff: f64,
    pub rrc_span: usize,
    pub rician_factor_db: f64,
    pub frame_len: usize,
}

impl Default for SignalSection {
    fn default() -> Self {
        Self {
            sampling_rate_mhz: 120.0,
            symbol_rate_mhz: 20.0,
            oversampling_ratio: 6,
            rrc_rolloff: 0.3,
            rrc_span: 10,
            rician_factor_db: 10.0,
            frame_len: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub num_emitters: usize,
    pub overlap: Overlap,
    #[serde(default = "default_channel")]
    pub channel: ChannelKind,
    pub snr_db: f64,
    #[serde(default = "default_samples_per_combo")]
    pub samples_per_combo: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_channel() -> ChannelKind {
    ChannelKind::Awgn
}

fn default_samples_per_combo() -> usize {
    60
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    #[serde(default)]
    pub name: Option<String>,
    pub gain_imbalance: f64,
    pub phase_bias_deg: f64,
    pub spur_amplitude: f64,
    pub spur_freq_mhz: f64,
    /// Carrier leakage `[re, im]` in units of 1e-3.
    pub carrier_leak_milli: [f64; 2],
    pub pa_coeffs: Vec<f64>,
    #[serde(default)]
    pub pa_coeffs_imag: Option<Vec<f64>>,
}

impl DeviceSection {
    fn to_profile(&self) -> Result<EmitterProfile> {
        let imag = match &self.pa_coeffs_imag {
            Some(v) if v.len() != self.pa_coeffs.len() => {
                return Err(Error::InvalidConfig(
                    "pa_coeffs_imag must match pa_coeffs in length".into(),
                ))
            }
            Some(v) => v.clone(),
            None => vec![0.0; self.pa_coeffs.len()],
        };
        let profile = EmitterProfile {
            gain_imbalance: self.gain_imbalance,
            phase_bias: self.phase_bias_deg.to_radians(),
            spur_amplitude: self.spur_amplitude,
            spur_freq_hz: self.spur_freq_mhz * MHZ,
            carrier_leak: Complex64::new(
                self.carrier_leak_milli[0] * 1e-3,
                self.carrier_leak_milli[1] * 1e-3,
            ),
            pa_coeffs: self
                .pa_coeffs
                .iter()
                .zip(imag)
                .map(|(&re, im)| Complex64::new(re, im))
                .collect(),
        };
        profile.validate()?;
        Ok(profile)
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("scenario file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario file serializes")
    }

    pub fn channel(&self) -> ChannelSpec {
        ChannelSpec {
            kind: self.scenario.channel,
            rician_k_db: self.signal.rician_factor_db,
            snr_db: self.scenario.snr_db,
        }
    }

    /// Builds the validated scenario and channel.
    pub fn resolve(&self) -> Result<(ScenarioConfig, ChannelSpec)> {
        let k = self.scenario.num_emitters;
        let profiles = if self.devices.is_empty() {
            let devs = table_devices();
            if k > devs.len() || k < 2 {
                return Err(Error::InvalidConfig(format!(
                    "no [[device]] rows given and {k} emitters requested (reference set has {})",
                    devs.len()
                )));
            }
            devs[..k].to_vec()
        } else {
            self.devices
                .iter()
                .map(DeviceSection::to_profile)
                .collect::<Result<Vec<_>>>()?
        };
        let if_configs = match &self.if_configurations_mhz {
            Some(rows) => rows
                .iter()
                .map(|r| r.iter().map(|f| f * MHZ).collect())
                .collect(),
            None => if_configurations(self.scenario.overlap, k),
        };
        let s = &self.signal;
        let cfg = ScenarioConfig {
            num_emitters: k,
            profiles,
            overlap: self.scenario.overlap,
            if_configs,
            frame_len: s.frame_len,
            waveform: WaveformParams {
                sample_rate_hz: s.sampling_rate_mhz * MHZ,
                symbol_rate_hz: s.symbol_rate_mhz * MHZ,
                oversampling: s.oversampling_ratio,
                rrc_rolloff: s.rrc_rolloff,
                rrc_span: s.rrc_span,
            },
            rng_seed: self.scenario.seed,
        };
        cfg.validate()?;
        let channel = self.channel();
        channel.validate()?;
        Ok((cfg, channel))
    }

    /// A reference scenario file for `k` emitters.
    pub fn reference(k: usize, overlap: Overlap, snr_db: f64, samples_per_combo: usize, seed: u64) -> Self {
        Self {
            signal: SignalSection::default(),
            scenario: ScenarioSection {
                num_emitters: k,
                overlap,
                channel: ChannelKind::Awgn,
                snr_db,
                samples_per_combo,
                seed,
            },
            devices: Vec::new(),
            if_configurations_mhz: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ghz_to_offsets(row: [f64; 3]) -> Vec<f64> {
        row.iter().map(|g| ((g - 2.44) * 1e9).round()).collect()
    }

    #[test]
    fn three_emitter_tables() {
        let zero = if_configurations(Overlap::None, 3);
        assert_eq!(zero.len(), 6);
        let expect = [
            [2.4140, 2.4400, 2.4660],
            [2.4140, 2.4660, 2.4400],
            [2.4400, 2.4140, 2.4660],
            [2.4400, 2.4660, 2.4140],
            [2.4660, 2.4140, 2.4400],
            [2.4660, 2.4400, 2.4140],
        ];
        for (row, e) in zero.iter().zip(expect) {
            assert_eq!(row, &ghz_to_offsets(e));
        }

        let half = if_configurations(Overlap::Half, 3);
        assert_eq!(half.len(), 6);
        assert_eq!(half[0], ghz_to_offsets([2.4270, 2.4400, 2.4530]));
        assert_eq!(half[5], ghz_to_offsets([2.4530, 2.4400, 2.4270]));

        let full = if_configurations(Overlap::Full, 3);
        assert_eq!(full.len(), 5);
        assert_eq!(full[0], ghz_to_offsets([2.4270; 3]));
        assert_eq!(full[4], ghz_to_offsets([2.4660; 3]));
        for row in &full {
            assert!(row.iter().all(|f| *f == row[0]));
        }
    }

    #[test]
    fn adjacent_spacing_matches_overlap() {
        let bw = WaveformParams::default().occupied_bandwidth_hz();
        assert!((bw - 26e6).abs() < 1.0);
        let half = if_configurations(Overlap::Half, 3);
        let mut row = half[0].clone();
        row.sort_by(f64::total_cmp);
        assert!((row[1] - row[0] - bw / 2.0).abs() < 1.0);
    }

    #[test]
    fn other_emitter_counts() {
        assert_eq!(if_configurations(Overlap::None, 4).len(), 24);
        assert_eq!(if_configurations(Overlap::Half, 7).len(), 7);
        assert!(ScenarioConfig::reference(5, Overlap::None, 0).is_ok());
        assert!(ScenarioConfig::reference(6, Overlap::None, 0).is_err());
    }

    #[test]
    fn label_validation() {
        let cfg = ScenarioConfig::reference(3, Overlap::Half, 0).unwrap();
        let ch = ChannelSpec::awgn(10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(cfg.receive(&[0, 0, 0], &ch, 0, &mut rng).is_err());
        assert!(cfg.receive(&[1, 0], &ch, 0, &mut rng).is_err());
        assert!(cfg.receive(&[2, 0, 0], &ch, 0, &mut rng).is_err());
        assert!(cfg.receive(&[1, 0, 0], &ch, 9, &mut rng).is_err());
    }

    #[test]
    fn high_snr_frame_tracks_clean_signal() {
        let cfg = ScenarioConfig::reference(3, Overlap::None, 0).unwrap();
        let ch = ChannelSpec::awgn(60.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rx = cfg.receive(&[0, 1, 0], &ch, 0, &mut rng).unwrap();
        let y = rx.received().unwrap();
        let p_sig = rx.clean.iter().map(|s| s.norm_sqr()).sum::<f64>();
        let p_err: f64 = y
            .samples()
            .iter()
            .zip(&rx.clean)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        let db = 10.0 * (p_err / p_sig).log10();
        assert!((db + 60.0).abs() < 0.5, "error power {db} dB");
    }

    #[test]
    fn requested_snr_is_realized() {
        let cfg = ScenarioConfig::reference(3, Overlap::Half, 0).unwrap();
        let ch = ChannelSpec::awgn(12.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (mut ps, mut pn) = (0.0, 0.0);
        for i in 0..120 {
            let label = [[1, 0, 0], [1, 1, 0], [1, 1, 1]][i % 3];
            let rx = cfg.receive(&label, &ch, i % 6, &mut rng).unwrap();
            ps += rx.clean.iter().map(|s| s.norm_sqr()).sum::<f64>();
            pn += rx.noise.iter().map(|s| s.norm_sqr()).sum::<f64>();
        }
        let snr = 10.0 * (ps / pn).log10();
        assert!((snr - 12.0).abs() < 0.1, "measured {snr}");
    }

    #[test]
    fn seeded_receive_is_deterministic() {
        let cfg = ScenarioConfig::reference(3, Overlap::Full, 0).unwrap();
        let ch = ChannelSpec::rician(10.0, 6.0);
        let a = cfg.receive(&[1, 1, 1], &ch, 2, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = cfg.receive(&[1, 1, 1], &ch, 2, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a.received().unwrap(), b.received().unwrap());
    }

    #[test]
    fn scenario_file_round_trip() {
        let text = r#"
            [signal]
            frame_len = 256

            [scenario]
            num_emitters = 2
            overlap = "50%"
            channel = "rician"
            snr_db = 6.0
            samples_per_combo = 12
            seed = 4

            [[device]]
            gain_imbalance = 1.01
            phase_bias_deg = 0.01
            spur_amplitude = 0.008
            spur_freq_mhz = 0.13
            carrier_leak_milli = [1.0, 7.0]
            pa_coeffs = [1.0, 0.2, 0.1]

            [[device]]
            gain_imbalance = 0.99
            phase_bias_deg = -0.01
            spur_amplitude = 0.007
            spur_freq_mhz = 0.12
            carrier_leak_milli = [1.5, 6.0]
            pa_coeffs = [1.0, 0.05]
        "#;
        let file = ScenarioFile::parse(text).unwrap();
        let (cfg, ch) = file.resolve().unwrap();
        assert_eq!(cfg.num_emitters, 2);
        assert_eq!(cfg.frame_len, 256);
        assert_eq!(cfg.if_configs.len(), 2);
        assert_eq!(ch.kind, ChannelKind::Rician);
        assert_eq!(ch.rician_k_db, 10.0);
        assert_eq!(cfg.profiles[1].pa_order(), 2);
        let again = ScenarioFile::parse(&file.to_toml()).unwrap();
        assert_eq!(again, file);
    }

    #[test]
    fn scenario_file_rejects_typos() {
        let text = "[scenario]\nnum_emitters = 3\noverlap = \"0%\"\nsnr_db = 1.0\nsed = 3\n";
        assert!(ScenarioFile::parse(text).is_err());
    }
}
