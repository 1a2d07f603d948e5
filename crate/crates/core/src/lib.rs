//! Multi-emitter RF fingerprint identification lab.
//!
//! The crate covers the whole pipeline:
//!
//! - [`signal`]: QPSK emitters with per-device hardware impairments (I/Q
//!   imbalance, carrier leakage, spurious tone, PA nonlinearity) superposed
//!   over AWGN or Rician channels, plus dataset assembly and preprocessing.
//! - [`tensor`]: a small reverse-mode autodiff engine with the operators the
//!   networks need, Adam, and the warmup/step learning-rate schedule.
//! - [`net`]: the multi-label fingerprint extractor with sigmoid activation
//!   detection, the `2^K - 1` class softmax baseline, and complexity counts.
//! - [`msgpass`]: cross-sample multi-head attention message passing and the
//!   enhanced network built on it.
//! - [`bounds`]: Fano-based upper bounds on subset and Hamming accuracy and
//!   a Donsker-Varadhan mutual information estimator.
//! - [`eval`]: metrics, class-correlation matrices, file formats, experiment
//!   orchestration and the `smei` command line.

mod binio;
pub mod bounds;
pub mod error;
pub mod eval;
pub mod msgpass;
pub mod net;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
