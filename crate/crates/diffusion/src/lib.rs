//! Diffusion over fitted network weights.
//!
//! Weight records are standardized, cut into tokens by a
//! [`wsd_weights::TokenLayout`], noised by the forward process in
//! [`schedule`], and denoised by a transformer trained to predict the clean
//! vector directly. [`sample`] runs DDIM or ancestral sampling and maps the
//! result back to a [`wsd_weights::WeightRecord`].

pub mod checkpoint;
pub mod error;
pub mod model;
pub mod sample;
pub mod schedule;
pub mod train;

pub use checkpoint::Checkpoint;
pub use error::{DiffusionError, Result};
pub use model::{time_embedding, Denoiser, DenoiserConfig, TimeMode, X0Predictor};
pub use sample::{ddim_sample, ddim_timesteps, ddpm_sample, sample_record, sample_rng, SampleConfig, DEFAULT_DDIM_STEPS};
pub use schedule::{q_sample, Schedule, ScheduleConfig};
pub use train::{train, TrainConfig, TrainLog, Trainer};
