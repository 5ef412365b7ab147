use std::path::PathBuf;

use thiserror::Error;
use wsd_tensor::TensorError;
use wsd_weights::WeightsError;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("token layout mismatch: {0}")]
    Layout(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (timesteps {timesteps:?}): {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, timesteps: Vec<usize>, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Weights(#[from] WeightsError),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, DiffusionError>;
