use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is numerically rank deficient (smallest singular value {0:e})")]
    Singular(f64),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("communication graph is not connected")]
    Disconnected,

    #[error("mixing matrix rejected: {0}")]
    Mixing(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("iterates diverged at iteration {iteration} (largest |entry| {max_entry:e})")]
    Divergence { iteration: usize, max_entry: f64 },

    #[error("degenerate instance: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
