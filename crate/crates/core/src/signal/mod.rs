//! Multi-emitter signal synthesis.
//!
//! Each active emitter produces an independent RRC-shaped QPSK burst, which
//! passes through that device's impairment chain (I/Q imbalance, then
//! carrier leakage and spurious tone at the digital IF, then a memoryless PA
//! polynomial). The distorted bursts are scaled by per-emitter channel gains,
//! summed, trimmed to the steady-state window and buried in complex AWGN at
//! the requested SNR.

mod channel;
mod dataset;
mod frame;
mod impair;
mod profile;
mod qpsk;
mod scenario;

pub use channel::{complex_gaussian, ChannelKind, ChannelSpec};
pub use dataset::{
    build_dataset, class_from_label, fit_global_stats, label_combinations, label_from_class, random_label,
    preprocess, synth_sample, Dataset, GlobalStats, LabeledSample, SplitDataset,
};
pub use frame::ComplexFrame;
pub use impair::{
    apply_if_spur_leak, apply_iq_imbalance, apply_pa_nonlinearity, distort, iq_mixing_coeffs,
};
pub use profile::{table_devices, EmitterProfile};
pub use qpsk::{make_qpsk_baseband, rrc_taps, QpskBurst, WaveformParams};
pub use scenario::{if_configurations, Overlap, Reception, ScenarioConfig, ScenarioFile};
