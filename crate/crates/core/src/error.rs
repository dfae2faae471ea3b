//! Crate-wide error type.

use std::fmt;

/// Errors surfaced by the planning toolkit.
///
/// Backend transport failures carry their own [`crate::backend::BackendError`]
/// so callers can distinguish retryable from fatal conditions.
#[derive(Debug)]
pub enum Error {
    /// A precondition on an operation's arguments was violated.
    InvalidArgument(String),
    /// A layout, dialect spec, or exemplar set disagrees on dialect.
    DialectMismatch { expected: String, found: String },
    /// Malformed or inconsistent input data (JSONL records, COCO files, caches).
    Data(String),
    /// Completion or embedding backend failure.
    Backend(crate::backend::BackendError),
    /// Filesystem failure, with the path that caused it.
    Io { path: String, source: std::io::Error },
    /// JSON (de)serialization failure.
    Json(serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::DialectMismatch { expected, found } => {
                write!(f, "dialect mismatch: expected {expected}, found {found}")
            }
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Backend(e) => write!(f, "backend error: {e}"),
            Error::Io { path, source } => write!(f, "io error on {path}: {source}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Backend(e) => Some(e),
            Error::Io { source, .. } => Some(source),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl From<crate::backend::BackendError> for Error {
    fn from(e: crate::backend::BackendError) -> Self {
        Error::Backend(e)
    }
}
