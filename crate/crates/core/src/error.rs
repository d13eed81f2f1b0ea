use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::SampleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Usage(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("unknown sample id {0}")]
    UnknownId(SampleId),

    #[error("unlabeled pool exhausted: {available} samples left, budget is {budget}")]
    PoolExhausted { available: usize, budget: usize },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("dataset integrity: {0}")]
    Integrity(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Usage(_) => 2,
            Error::Parse { .. } | Error::Integrity(_) | Error::UnknownId(_) | Error::Io { .. } => 3,
            Error::Shape(_)
            | Error::Numeric(_)
            | Error::DegenerateVector(_)
            | Error::PoolExhausted { .. } => 4,
        }
    }
}
