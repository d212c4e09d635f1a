use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared by all modules of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("degenerate output; cannot standardize")]
    DegenerateOutputs,

    #[error("ill-conditioned kernel matrix")]
    IllConditionedKernel,

    #[error("csv error in {path} at row {row}, column {column}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("oracle error: {message}{}", stderr.as_deref().map(|s| format!("; stderr: {s}")).unwrap_or_default())]
    Oracle {
        message: String,
        stderr: Option<String>,
    },

    #[error("model schema mismatch: {0}")]
    ModelSchema(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    pub fn oracle(message: impl Into<String>) -> Self {
        Error::Oracle {
            message: message.into(),
            stderr: None,
        }
    }
}
