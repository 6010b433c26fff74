use std::path::PathBuf;

/// Errors raised by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("insufficient precision: {0}")]
    Precision(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}

pub(crate) fn numeric(msg: impl Into<String>) -> Error {
    Error::Numeric(msg.into())
}
