use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {layer}")]
    NonFinite { layer: String },

    #[error("empty caption")]
    EmptyCaption,

    #[error("embedding not found for id {0:?}")]
    EmbeddingNotFound(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: Vec<u8>, found: Vec<u8> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unexpected EOF at offset {offset}")]
    Truncated { offset: u64 },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("AP undefined: label set has no {missing} examples")]
    ApUndefined { missing: &'static str },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than runtime failure.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::EmptyCaption
                | Error::EmbeddingNotFound(_)
                | Error::BadMagic { .. }
                | Error::DimensionMismatch { .. }
                | Error::Truncated { .. }
                | Error::DuplicateId(_)
                | Error::Format(_)
                | Error::Json(_)
        )
    }
}
