use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty set: {0}")]
    Empty(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite distance at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("rendering probe {probe} (pose {pose}, camera {camera}): {source}")]
    Render { probe: usize, pose: usize, camera: usize, source: wsd_avatar::AvatarError },

    #[error(transparent)]
    Avatar(#[from] wsd_avatar::AvatarError),

    #[error(transparent)]
    Tensor(#[from] wsd_tensor::TensorError),

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, MetricsError>;
