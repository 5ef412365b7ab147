//! The `wsd` pipeline: synthetic data, per-identity fitting, weight packing,
//! diffusion training, sampling, rendering, and evaluation.

pub mod commands;
pub mod config;

pub use config::{Preset, RunConfig};
