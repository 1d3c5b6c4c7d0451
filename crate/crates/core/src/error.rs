//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shape mismatch; carries a dimension diagnostic.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Argument outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed binary input (IDX files, checkpoints, tables).
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Checkpoint integrity or version failure.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Dataset/model preprocessing provenance disagreement.
    #[error("provenance mismatch: {0} (pass an explicit override to reproduce test-only ablations)")]
    Provenance(String),

    /// Invalid configuration or manifest.
    #[error("config error: {0}")]
    Config(String),

    /// Training diverged (non-finite loss) before any usable checkpoint.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// Requested operation needs state that was not built yet.
    #[error("{0}")]
    Missing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image decode error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
