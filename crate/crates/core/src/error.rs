use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed CSV content. `line` and `column` are 1-based.
    #[error("{}: line {line}, column {column}: {message}", path.display())]
    Csv {
        path: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    /// The cross-covariance of views `i` and `j` has zero Frobenius norm, so its
    /// fidelity weight is undefined.
    #[error("cross-covariance between views {i} and {j} is identically zero (weight undefined)")]
    DegeneratePair { i: usize, j: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, shapes, parameters),
    /// false for failures that happen during computation.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::DegeneratePair { .. } | Error::Numerical(_))
    }
}
