use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An annotation record is missing a field or carries the wrong type.
    #[error("schema error at `{field}`: {reason}")]
    Schema { field: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("batch construction error: {0}")]
    Batch(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A loss or gradient became NaN or infinite.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Errors from the tensor engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index {index} out of range for {what} of size {bound}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    /// L2 normalization of an exactly-zero vector.
    #[error("degenerate projection: row {row} has zero norm")]
    Degenerate { row: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
