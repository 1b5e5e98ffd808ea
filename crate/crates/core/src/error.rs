use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Raised when parameters, losses or gradients leave the finite range or the
/// loss exceeds [`crate::tasks::DIVERGENCE_THRESHOLD`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("training diverged")]
pub struct Diverged;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid hyperparameters for {rule}: {reason}")]
    InvalidHyperparams { rule: String, reason: String },

    #[error("unknown optimizer rule `{0}`")]
    UnknownRule(String),

    #[error("event out of order: expected cumulative epoch {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("performance ratio undefined: {0}")]
    UndefinedRatio(String),

    #[error("trial {0} has no checkpoint to resume from")]
    MissingCheckpoint(usize),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("results log: {0}")]
    Log(String),

    #[error("{0}")]
    Diverged(#[from] Diverged),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
