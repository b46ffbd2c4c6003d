use std::path::PathBuf;

use crate::datapool::SampleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the framework reports. Variants mirror the contract
/// violations of each operation so callers can match on them.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed {format} input: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("label {label} outside 0..{num_classes}")]
    LabelRange { label: usize, num_classes: usize },

    #[error("budget error: {0}")]
    Budget(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("sample {id} {reason}")]
    PoolMembership { id: SampleId, reason: &'static str },

    #[error("non-finite value{}: {what}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    Numerics { what: String, epoch: Option<usize> },

    #[error("empty batch")]
    EmptyBatch,

    #[error("operation requires the {expected} variant")]
    Variant { expected: &'static str },

    #[error("unlabeled pool is empty")]
    EmptyPool,

    #[error("degenerate statistics: {0}")]
    DegenerateStats(String),

    #[error("weibull fit did not converge after {iterations} iterations")]
    Fit { iterations: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("cannot aggregate runs: {0}")]
    Aggregation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("oracle service: {0}")]
    Service(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape { expected: expected.to_string(), actual: actual.to_string() }
    }

    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format { format, reason: reason.into() }
    }
}
