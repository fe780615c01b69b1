use thiserror::Error;

use crate::hilbert::SpaceSpec;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("space mismatch: {left:?} vs {right:?}")]
    SpaceMismatch { left: SpaceSpec, right: SpaceSpec },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("time {time} is not an integer multiple of the grid spacing {dx}")]
    Misaligned { time: f64, dx: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown model id `{0}`")]
    UnknownModel(String),

    #[error("non-finite state at step {step} (path {path})")]
    NonFinite { step: usize, path: u64 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Configuration problems are the caller's fault; the rest happen at run time.
    pub fn is_config(&self) -> bool {
        !matches!(self, Error::NonFinite { .. } | Error::Io(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
