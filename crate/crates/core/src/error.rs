use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AdError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("data error at row {row}: {reason}")]
    Data { row: usize, reason: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("series too short for {what}: need at least {required} samples, got {actual}")]
    TooShort {
        what: &'static str,
        required: usize,
        actual: usize,
    },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("unknown architecture {name:?}; valid names: {valid}")]
    UnknownArchitecture { name: String, valid: String },
    #[error("model error at step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: AdError,
    },
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Divergence {
        epoch: usize,
        batch: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures rooted in floating-point arithmetic rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Divergence { .. } => true,
            Error::Autodiff(e) | Error::Step { source: e, .. } => {
                matches!(e, AdError::NonFinite { .. })
            }
            _ => false,
        }
    }
}
