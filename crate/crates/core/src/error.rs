use std::io;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("solver did not converge after {iterations} iterations (marginal violation {violation:.3e})")]
    NotConverged { iterations: usize, violation: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for failures of the numerics (as opposed to bad inputs).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::NotConverged { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
