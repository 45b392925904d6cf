use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A value cannot be represented in the requested scalar format.
    #[error("range error: {0}")]
    Range(String),

    /// A caller-supplied argument is outside its documented domain.
    #[error("argument error: {0}")]
    Argument(String),

    /// An architecture description does not type-check.
    #[error("spec error: {0}")]
    Spec(String),

    /// A weight file or other binary artifact is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// Dataset ingestion failed (missing annotations, unreadable directory).
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// A single annotation row or image could not be decoded.
    #[error("{file}:{line}: {message}")]
    Row {
        file: PathBuf,
        line: u64,
        message: String,
    },

    /// A single sample is unusable (e.g. degenerate crop box).
    #[error("sample error: {0}")]
    Sample(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Broken internal bookkeeping (mismatched caches, stale indices).
    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
