use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    /// Every weight of a conditional quantized (or truncated) to zero.
    #[error("degenerate distribution: all weights quantized to zero")]
    DegenerateDistribution,

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("insufficient chains: need at least 2, got {0}")]
    InsufficientChains(usize),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Trace { path: PathBuf, message: String },

    #[error("{arm} chain {run} (seed {seed}) failed: {source}")]
    Chain {
        arm: String,
        run: usize,
        seed: u64,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Whether the error comes from the experiment configuration rather than a run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
