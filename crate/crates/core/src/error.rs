use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("value {value} outside domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("C = {c} is below g(1/M) = {floor}; the chance-level case applies")]
    Branch { c: f64, floor: f64 },

    #[error("training diverged at {stage} {index}: {reason}")]
    Diverged {
        stage: &'static str,
        index: usize,
        reason: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI; each failure class gets its own.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::InvalidConfig(_) => 4,
            Error::Format(_) => 5,
            Error::Diverged { .. } => 6,
            Error::Dimension(_) => 7,
            Error::DegenerateInput(_) => 8,
            Error::Domain { .. } | Error::Branch { .. } => 9,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
