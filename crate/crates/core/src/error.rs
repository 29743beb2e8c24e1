use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the sampling toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("timestep {t} out of range 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed dataset file: {0}")]
    Dataset(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("infeasible task: {0}")]
    Infeasible(String),

    #[error("method {method} used {used} NFEs, exceeding its budget of {budget}")]
    BudgetExceeded {
        method: String,
        used: u64,
        budget: u64,
    },

    #[error("{path}: {source}")]
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

    /// Process exit status for this error: 2 for bad inputs (config, files,
    /// arguments), 1 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) | Error::BudgetExceeded { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
