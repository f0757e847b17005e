use thiserror::Error;

/// Errors raised by the library.
///
/// The variants are grouped so that callers (the CLI in particular) can map them
/// onto coarse failure classes: bad input, data/format problems, and numerical
/// failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("requested rank {requested} exceeds achievable rank {achievable}")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("exact estimator refused for n = {n} (limit {limit}); use a Nystrom estimator")]
    TooLarge { n: usize, limit: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
