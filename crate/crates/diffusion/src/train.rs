//! x₀-prediction training: MSE between predicted and clean standardized
//! weights at a uniformly drawn timestep.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use wsd_tensor::{stream_rng, AdamW, AdamWConfig, Graph, Rng, Tensor, TensorError};

use crate::error::{DiffusionError, Result};
use crate::model::Denoiser;
use crate::schedule::{q_sample, Schedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f32,
    /// Multiplicative decay applied every `decay_every` epochs.
    pub lr_decay: f32,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self { lr: 1e-3, lr_decay: 0.9, decay_every: 200, epochs: 2000, batch_size: 2, weight_decay: 0.0, seed: 0 }
    }

    pub fn paper() -> Self {
        Self { lr: 2e-4, lr_decay: 0.9, decay_every: 200, epochs: 2000, batch_size: 16, weight_decay: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.decay_every == 0 {
            return Err(DiffusionError::Config("batch_size and decay_every must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(DiffusionError::Config(format!("lr {} / decay {} out of range", self.lr, self.lr_decay)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(DiffusionError::Config(format!("weight decay {}", self.weight_decay)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

/// Mean loss per epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f32>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{e},{l}\n"));
        }
        s
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|source| DiffusionError::Io { path: path.to_owned(), source })
    }
}

/// Optimizer plus the denoiser it updates.
pub struct Trainer<'a> {
    pub model: &'a mut Denoiser,
    opt: AdamW,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a mut Denoiser, lr: f32, weight_decay: f32) -> Self {
        let opt = AdamW::new(AdamWConfig { lr, weight_decay, ..AdamWConfig::default() }, &model.tensors());
        Self { model, opt }
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.opt.set_lr(lr);
    }

    /// Loss of one batch of clean vectors at the given timesteps and noise,
    /// without updating anything.
    pub fn loss(&self, clean: &[&[f32]], timesteps: &[usize], noise: &[Vec<f32>], schedule: &Schedule) -> Result<f32> {
        let mut g = Graph::new();
        let vars = self.model.bind(&mut g, false);
        let loss = batch_loss(&mut g, self.model, &vars, clean, timesteps, noise, schedule)?;
        Ok(g.value(loss).item())
    }

    /// One AdamW step on a batch; returns the loss before the update.
    pub fn step(&mut self, clean: &[&[f32]], timesteps: &[usize], noise: &[Vec<f32>], schedule: &Schedule) -> Result<f32> {
        let mut g = Graph::new();
        let vars = self.model.bind(&mut g, true);
        let loss = batch_loss(&mut g, self.model, &vars, clean, timesteps, noise, schedule)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(DiffusionError::Tensor(TensorError::NonFinite { context: "loss".into(), index: 0 }));
        }
        let mut grads = g.backward(loss)?;
        let grads: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
        let mut params = self.model.tensors();
        self.opt.step(&mut params, &grads)?;
        self.model.set_tensors(params)?;
        Ok(value)
    }
}

fn batch_loss(
    g: &mut Graph,
    model: &Denoiser,
    vars: &[wsd_tensor::Var],
    clean: &[&[f32]],
    timesteps: &[usize],
    noise: &[Vec<f32>],
    schedule: &Schedule,
) -> Result<wsd_tensor::Var> {
    let dim = model.layout.dim;
    let width = model.width();
    let b = clean.len();
    if b == 0 || timesteps.len() != b || noise.len() != b {
        return Err(DiffusionError::Config(format!("batch of {b} with {} timesteps, {} noise draws", timesteps.len(), noise.len())));
    }
    let mut noisy = Vec::with_capacity(b * width);
    let mut target = Vec::with_capacity(b * dim);
    for ((x0, &t), eps) in clean.iter().zip(timesteps).zip(noise) {
        if x0.len() != dim {
            return Err(DiffusionError::Layout(format!("vector of length {}, layout dimension {dim}", x0.len())));
        }
        let xt = q_sample(schedule, x0, t, eps)?;
        noisy.extend_from_slice(&xt);
        noisy.resize(noisy.len() + width - dim, 0.0);
        target.extend_from_slice(x0);
    }
    let x = g.input(Tensor::new([b, width], noisy)?);
    let pred = model.forward(g, vars, x, timesteps)?;
    let pred = if width > dim { g.slice(pred, 1, 0, dim)? } else { pred };
    let target = g.input(Tensor::new([b, dim], target)?);
    Ok(g.mse(pred, target)?)
}

pub fn sample_timesteps(rng: &mut Rng, count: usize, steps: usize) -> Vec<usize> {
    (0..count).map(|_| rng.random_range(1..=steps)).collect()
}

pub fn sample_noise(rng: &mut Rng, count: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..count).map(|_| (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()).collect()
}

/// Train on standardized vectors. Batches are drawn from a per-epoch
/// shuffle; `progress` sees `(epoch, mean loss)`.
pub fn train(
    model: &mut Denoiser,
    data: &[Vec<f32>],
    schedule: &Schedule,
    config: &TrainConfig,
    mut progress: impl FnMut(usize, f32),
) -> Result<TrainLog> {
    config.validate()?;
    if data.is_empty() {
        return Err(DiffusionError::Config("no training vectors".into()));
    }
    let dim = model.layout.dim;
    let mut rng = stream_rng(config.seed, 0x7a1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();
    let mut trainer = Trainer::new(model, config.lr, config.weight_decay);
    for epoch in 0..config.epochs {
        trainer.set_lr(config.lr_at(epoch));
        order.shuffle(&mut rng);
        let mut sum = 0.0f64;
        let mut batches = 0;
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let clean: Vec<&[f32]> = idx.iter().map(|&i| data[i].as_slice()).collect();
            let ts = sample_timesteps(&mut rng, idx.len(), schedule.steps());
            let noise = sample_noise(&mut rng, idx.len(), dim);
            let loss = trainer.step(&clean, &ts, &noise, schedule).map_err(|e| match e {
                DiffusionError::Tensor(TensorError::NonFinite { context, index }) => DiffusionError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    timesteps: ts.clone(),
                    detail: format!("{context} at index {index}"),
                },
                other => other,
            })?;
            sum += loss as f64;
            batches += 1;
        }
        let mean = (sum / batches as f64) as f32;
        log.losses.push(mean);
        progress(epoch, mean);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay() {
        let c = TrainConfig { lr: 1.0, lr_decay: 0.5, decay_every: 10, ..TrainConfig::desk() };
        assert_eq!(c.lr_at(9), 1.0);
        assert_eq!(c.lr_at(10), 0.5);
        assert_eq!(c.lr_at(25), 0.25);
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::desk() }.validate().is_err());
    }

    #[test]
    fn csv_header() {
        let log = TrainLog { losses: vec![1.5, 0.25] };
        assert_eq!(log.to_csv(), "epoch,loss\n0,1.5\n1,0.25\n");
    }
}
