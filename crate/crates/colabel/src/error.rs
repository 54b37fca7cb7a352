use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes of two structures that must agree do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A value violates a documented invariant (range, finiteness, ...).
    #[error("invalid value: {0}")]
    InvalidValue(String),

    /// An input exceeds a configured size cap (e.g. the exact-filter cap).
    #[error("size cap exceeded: {0}")]
    CapExceeded(String),

    /// A binary file does not conform to its format.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A run configuration failed validation; the message names the field path.
    #[error("config error: {0}")]
    Config(String),

    /// A metric was asked to evaluate an empty set.
    #[error("empty evaluation set: {0}")]
    EmptyEvaluation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
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

pub type Result<T> = std::result::Result<T, Error>;
