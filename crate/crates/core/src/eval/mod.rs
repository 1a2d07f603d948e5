//! Metrics, correlation analysis, file formats, experiments and the CLI.

pub mod cli;
mod corr;
mod experiment;
mod io;
mod metrics;

pub use corr::{correlation_matrix, pearson, CorrelationMatrix, SharingSummary};
pub use experiment::{
    all_splits, epochs_csv, evaluate, generate, results_csv, run_experiment, ExperimentRow, ExperimentSpec,
    ExperimentSummary, TrunkSettings, RESULTS_CSV_VERSION,
};
pub use io::{
    decode_dataset, decode_report, encode_dataset, encode_report, read_dataset, read_report, write_dataset,
    write_report, DATASET_VERSION, REPORT_VERSION,
};
pub use metrics::{hamming_accuracy, per_emitter_accuracy, subset_accuracy, MetricsReport};
