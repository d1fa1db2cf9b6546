//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: bad IDX data at offset {offset}: {msg}")]
    IdxFormat {
        path: String,
        offset: u64,
        msg: String,
    },

    #[error("cifar: {0}")]
    CifarFormat(String),

    #[error("csv schema error: {0}")]
    CsvSchema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("wire protocol error: {0}")]
    Wire(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
