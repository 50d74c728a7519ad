//! Error types shared across the toolkit.

use std::path::PathBuf;

use thiserror::Error;

/// Unified error type for all pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (inverted ranges, bad tables, malformed specs).
    #[error("configuration error: {0}")]
    Config(String),

    /// Image dimensions violate an operation's requirements.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Input values outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Structural mismatch between rasters or missing required assets.
    #[error("structural error: {0}")]
    Structural(String),

    /// Manifest parsing or validation failure.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Filesystem failure with the offending path attached.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Image encode/decode failure.
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// HTTP transport failure after retries were exhausted.
    #[error("endpoint error: {0}")]
    Endpoint(String),

    /// Scoring was asked to aggregate an empty record set.
    #[error("empty record set: nothing to score")]
    EmptyReport,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
