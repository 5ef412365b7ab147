use std::path::PathBuf;

use thiserror::Error;
use wsd_splat::SplatError;
use wsd_tensor::TensorError;
use wsd_weights::WeightsError;

#[derive(Debug, Error)]
pub enum AvatarError {
    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("weights do not match the network: {0}")]
    WeightMismatch(String),

    #[error("dataset: {0}")]
    Data(String),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Splat(#[from] SplatError),

    #[error(transparent)]
    Weights(#[from] WeightsError),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

pub type Result<T> = std::result::Result<T, AvatarError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> AvatarError + '_ {
    move |source| AvatarError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn json_err(path: &std::path::Path) -> impl FnOnce(serde_json::Error) -> AvatarError + '_ {
    move |source| AvatarError::Json { path: path.to_path_buf(), source }
}
