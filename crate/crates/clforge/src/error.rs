//! Crate-wide error type with CLI exit-code categories.

use thiserror::Error;

/// Errors surfaced by any clforge module.
///
/// Each variant maps onto one CLI exit code: usage errors exit 1, data
/// errors exit 2, numeric/training errors exit 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("data: {0}")]
    Data(String),

    #[error("training: {0}")]
    Train(String),

    #[error("numeric: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Exit code for the CLI: 1 usage, 2 data, 3 training/numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) | Error::Io(_) | Error::Json(_) => 2,
            Error::Train(_) | Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
