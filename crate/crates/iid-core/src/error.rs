use std::path::PathBuf;
use thiserror::Error;

/// Errors surfaced by the decomposition library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its documented domain (non-positive sigma,
    /// zero-sized image, k larger than the sample count, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two inputs that must agree in shape do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A raster or annotation file could not be read or written.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A raster file decoded but is not usable (bad magic, unsupported
    /// layout, truncated payload).
    #[error("malformed raster {path}: {reason}")]
    MalformedRaster { path: PathBuf, reason: String },

    /// An annotation or config document failed to parse.
    #[error("malformed document {path}: {reason}")]
    MalformedDocument { path: PathBuf, reason: String },

    /// Synthetic scene generation could not satisfy its separation
    /// constraints (palette too crowded for the requested color count).
    #[error("generation failed: {0}")]
    Generation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
