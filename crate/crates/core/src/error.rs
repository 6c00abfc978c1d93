use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("depth must be positive and finite, got {0}")]
    InvalidDepth(f64),

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("rotation matrix is not orthonormal (max deviation {0:.3e})")]
    NotARotation(f64),

    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("disparity must be positive and finite, got {0}")]
    InvalidDisparity(f64),

    #[error("sample point ({0}, {1}) is outside the grid")]
    OutOfBounds(f64, f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scene specification is invalid: {0}")]
    InvalidScene(String),

    #[error("bundle is inconsistent: {0}")]
    InvalidBundle(String),

    #[error("no valid pixels to evaluate: {0}")]
    NoValidPixels(String),

    #[error("non-finite loss at epoch {epoch} for pair {pair}")]
    NonFiniteLoss { pair: String, epoch: usize },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: manifest is invalid:\n{}", problems.join("\n"))]
    ManifestInvalid { path: PathBuf, problems: Vec<String> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
