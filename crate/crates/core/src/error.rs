use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DsrError {
    #[error("invalid feature map: {0}")]
    InvalidMap(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("gallery has no blocks")]
    EmptyGallery,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("format error: {0}")]
    Format(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DsrError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DsrError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn mismatch(what: &'static str, expected: usize, actual: usize) -> Self {
        DsrError::DimensionMismatch {
            what,
            expected,
            actual,
        }
    }
}

pub type Result<T, E = DsrError> = std::result::Result<T, E>;
