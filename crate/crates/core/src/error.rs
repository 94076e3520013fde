use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training failure: {0}")]
    TrainingFailure(String),

    #[error("failed to load {path}: {reason}")]
    LoadFailure { path: PathBuf, reason: String },

    #[error("role mismatch: checkpoint holds a {found} model, expected {expected}")]
    RoleMismatch { expected: String, found: String },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("scheduling failure: {0}")]
    SchedulingFailure(String),

    #[error("gradient check failure: {0}")]
    CheckFailure(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
