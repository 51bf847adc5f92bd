use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("missing dataset {0}")]
    MissingDataset(String),

    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("file is read-only: {0}")]
    ReadOnlyFile(PathBuf),

    #[error("malformed fixture: {0}")]
    Fixture(String),

    #[error("{0}")]
    Usage(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sampling violation: {0}")]
    SamplingViolation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("hdf5: {0}")]
    Hdf5(#[from] hdf5::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config { .. } | Error::Usage(_) => ErrorClass::Usage,
            Error::Numerical(_) | Error::SamplingViolation(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn shape(what: &str, expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            what: what.to_string(),
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }
}
