use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or images) whose extents are incompatible for an operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An invalid hyperparameter, extent, or option.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A caller broke an API contract (wrong iteration state, non-scalar loss, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A value outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed file contents. `offset` is the byte position where decoding failed.
    #[error("{format} format error at byte {offset}: {message}")]
    Format {
        format: &'static str,
        offset: usize,
        message: String,
    },

    /// Image data that decodes but violates an image invariant (NaN, negative radiance, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Numerical failure during optimization.
    #[error("training failure at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    /// A gradient holding NaN or infinity reached the optimizer.
    #[error("non-finite gradient for parameter {parameter}")]
    NonFiniteGradient { parameter: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(format: &'static str, offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
