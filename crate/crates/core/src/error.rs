//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Singular or otherwise unsolvable linear system.
    #[error("ill-posed system: {0}")]
    IllPosed(String),

    #[error("empty {0}")]
    Empty(&'static str),

    /// Non-finite values or other numeric breakdown mid-computation.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "training diverged: loss {loss:.4e} stayed above 10x the initial loss \
         {initial:.4e} for {window} consecutive steps (last step {step})"
    )]
    TrainingDiverged {
        step: usize,
        loss: f64,
        initial: f64,
        window: usize,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("verification failed: {failed} of {total} checks did not pass")]
    VerificationFailed { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
