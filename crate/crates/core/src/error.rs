use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A log or division would blow up, e.g. a ghost token whose student mass is zero.
    #[error("numerical singularity: {0}")]
    Singularity(String),

    #[error("corrupt cache file at byte {offset}: {reason}")]
    CorruptFile { offset: usize, reason: String },

    #[error("unsupported cache format: {0}")]
    UnsupportedVersion(String),

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("angle undefined: {0}")]
    UndefinedAngle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
