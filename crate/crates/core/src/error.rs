use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes that cannot be combined by the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A precondition on arguments (not shapes) was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("non-finite loss at step {step} (lr {lr:e}, grad norm {grad_norm:e})")]
    NonFinite { step: usize, lr: f64, grad_norm: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn contract_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
