use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input lies outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested architecture or variant is not supported by this operation.
    #[error("unsupported: {0}")]
    Feature(String),

    #[error("enumeration budget exceeded: smaller side has {size} > {limit} entries")]
    Budget { size: usize, limit: usize },

    /// Iterative solver or factorisation failure.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("dense core too small: found {n_good} fully connected columns, need {needed}")]
    InsufficientCore { n_good: usize, needed: usize },

    #[error("contract violation: {0}")]
    Contract(String),
}

impl Error {
    pub fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
