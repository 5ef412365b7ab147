use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplatError {
    #[error("gaussian {index}: quaternion has zero norm")]
    ZeroQuaternion { index: usize },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, SplatError>;
