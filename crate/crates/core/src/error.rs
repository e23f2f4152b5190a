use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("graph at round {round} is disconnected")]
    Disconnected { round: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("unsupported oracle: {0}")]
    UnsupportedOracle(&'static str),

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("iteration cap of {cap} exceeded")]
    IterationCap { cap: usize },

    #[error("iterates diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("trace does not match the round schedule: {0}")]
    TraceMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
