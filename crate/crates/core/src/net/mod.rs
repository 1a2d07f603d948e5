//! Fingerprint extractor, activation detector, the multiclass baseline and
//! complexity accounting.

mod checkpoint;
mod complexity;
mod config;
mod detect;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use complexity::{count_flops, count_params, ComplexityRow};
pub use config::{ExtractorConfig, ModelKind, NetworkConfig, MULTICLASS_MAX_EMITTERS};
pub use detect::{detect, Prediction};
pub use model::{Forward, Mode, Network, BN_EPS, BN_MOMENTUM};
pub use train::{initial_loss, train, train_with, validate, EpochLog, TrainConfig, TrainOutcome};

/// Builds the `2^K - 1` class softmax baseline on the standard trunk.
pub fn build_multiclass_baseline(extractor: ExtractorConfig, seed: u64) -> crate::Result<Network> {
    Network::new(NetworkConfig::multiclass(extractor), seed)
}

/// Builds the multi-label extractor.
pub fn build_extractor(extractor: ExtractorConfig, seed: u64) -> crate::Result<Network> {
    Network::new(NetworkConfig::smei(extractor), seed)
}
