use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = StagError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum StagError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("index {index} out of range (< {bound}) in {context}")]
    OutOfRange {
        context: String,
        index: usize,
        bound: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("network failure: {0}")]
    Network(String),

    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

impl StagError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            StagError::MissingFile(path)
        } else {
            StagError::Io { path, source }
        }
    }

    pub fn parse(what: impl Into<String>, detail: impl ToString) -> Self {
        StagError::Parse {
            what: what.into(),
            detail: detail.to_string(),
        }
    }

    pub fn dims(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        StagError::DimensionMismatch {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        StagError::InvalidArgument(msg.into())
    }

    /// Whether the error stems from bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            StagError::MissingFile(_)
                | StagError::Parse { .. }
                | StagError::DimensionMismatch { .. }
                | StagError::OutOfRange { .. }
                | StagError::InvalidArgument(_)
                | StagError::Degenerate(_)
        )
    }
}
