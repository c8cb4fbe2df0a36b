//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by corpus ingestion, indexing, retrieval, training, and
/// metric computation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A malformed input line. `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid language code {0:?}: expected two lowercase ASCII letters")]
    InvalidLanguageCode(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown document id {0:?}")]
    UnknownDocId(String),

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A correlation that has no defined value (fewer than two points, or
    /// zero rank variance). Callers typically skip the pair and reduce the
    /// divisor.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("ranked lists belong to different queries: {a:?} vs {b:?}")]
    QidMismatch { a: String, b: String },

    /// A batch that cannot produce the requested loss (e.g. no negatives in
    /// scope, or a degenerate document set).
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("corrupt or unsupported file {path:?}: {msg}")]
    BadFormat { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
