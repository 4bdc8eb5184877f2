use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not positive definite: pivot {index} is {pivot:e}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{estimator}: need at least {needed} samples for {partitions} partitions, got {available}")]
    InsufficientSamples {
        estimator: &'static str,
        needed: usize,
        partitions: usize,
        available: usize,
    },

    /// The private histogram zeroed every bin, so the estimator has no answer.
    #[error("{estimator}: private histogram released no bin (all noisy counts below threshold)")]
    NoBinReleased { estimator: &'static str },

    #[error("iterate diverged at round {round}: norm {norm:e}")]
    Diverged { round: usize, norm: f64 },

    #[error("distance estimate failed at round {round}: {source}")]
    RoundFailed {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("{solver} failed: {reason}")]
    SolverFailed { solver: &'static str, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
