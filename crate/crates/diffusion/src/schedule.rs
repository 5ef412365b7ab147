//! Linear-β forward process.

use serde::{Deserialize, Serialize};

use crate::error::{DiffusionError, Result};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: DEFAULT_STEPS, beta_start: DEFAULT_BETA_START, beta_end: DEFAULT_BETA_END }
    }
}

/// Tables indexed by timestep `t ∈ 1..=T`; index 0 holds the clean state
/// (`ᾱ_0 = 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub config: ScheduleConfig,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Schedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        let ScheduleConfig { steps, beta_start, beta_end } = config;
        if steps == 0 || !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::Schedule(format!(
                "need T >= 1 and 0 < beta_start <= beta_end < 1, got T={steps}, [{beta_start}, {beta_end}]"
            )));
        }
        let mut betas = vec![0.0];
        let mut alpha_bars = vec![1.0];
        let mut acc = 1.0f64;
        for i in 0..steps {
            let b = if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            };
            acc *= 1.0 - b;
            betas.push(b);
            alpha_bars.push(acc);
        }
        Ok(Self { config, betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.config.steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Self::new(ScheduleConfig::default()).expect("default schedule is valid")
    }
}

/// `x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε`
pub fn q_sample(schedule: &Schedule, x0: &[f32], t: usize, eps: &[f32]) -> Result<Vec<f32>> {
    if x0.len() != eps.len() {
        return Err(DiffusionError::Config(format!("x0 has {} values, noise {}", x0.len(), eps.len())));
    }
    if t > schedule.steps() {
        return Err(DiffusionError::Config(format!("timestep {t} beyond T = {}", schedule.steps())));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(&x, &e)| (a * x as f64 + b * e as f64) as f32).collect())
}
