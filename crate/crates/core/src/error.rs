use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("warm-up incomplete: {needed} lagged samples required, {have} buffered")]
    WarmupIncomplete { needed: usize, have: usize },

    #[error("no edge switch possible: topology needs at least one active and one inactive slot")]
    NoSwitchPossible,

    #[error("numeric divergence at t={t}: {detail}")]
    Diverged { t: usize, detail: String },

    #[error("normalization undefined: all entries are zero")]
    UndefinedNormalization,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
