use thiserror::Error;

use crate::optim::TrainTrace;

/// Errors produced by the transport library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite state encountered at integration step {step}")]
    NonFiniteState { step: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("training aborted at epoch {epoch}: non-finite loss")]
    NonFiniteLoss { epoch: usize, trace: Box<TrainTrace> },

    #[error("csv row {row}: {msg}")]
    Csv { row: usize, msg: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("simulation diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
