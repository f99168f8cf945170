use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("buffer of length {len} does not match shape {height}x{width}")]
    BufferLength {
        height: usize,
        width: usize,
        len: usize,
    },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Mismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing directory {0}")]
    MissingDirectory(PathBuf),
    #[error("no ground-truth mask for anomalous image {0}")]
    MissingMask(PathBuf),
    #[error("failed to decode {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to encode {path}: {source}")]
    Encode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("unsupported input size {0} (expected a positive multiple of 32)")]
    InputSize(usize),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}
