//! AdamW with decoupled weight decay.

use crate::error::{arg_err, shape_err, Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Optimizer state for an ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    shapes: Vec<Vec<usize>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.config.lr = lr;
    }

    pub fn first_moment(&self, index: usize) -> &[f32] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f32] {
        &self.v[index]
    }

    /// One update. Gradients are validated before any parameter is touched,
    /// so a rejected step leaves both parameters and moments unchanged.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        let c = self.config;
        if !(c.lr >= 0.0) {
            return Err(arg_err("adamw", format!("learning rate must be >= 0, got {}", c.lr)));
        }
        if params.len() != self.shapes.len() || grads.len() != params.len() {
            return Err(shape_err(
                "adamw",
                format!("{} params / {} grads for {} slots", params.len(), grads.len(), self.shapes.len()),
            ));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.shapes[k].as_slice() || g.shape() != p.shape() {
                return Err(shape_err(
                    "adamw",
                    format!("param {k}: state {:?}, param {:?}, grad {:?}", self.shapes[k], p.shape(), g.shape()),
                ));
            }
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite { context: format!("adamw gradient of param {k}"), index: i });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - (c.beta1 as f64).powi(t);
        let bc2 = 1.0 - (c.beta2 as f64).powi(t);
        let decay = 1.0 - c.lr * c.weight_decay;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *w *= decay;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gr;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gr * gr;
                let m_hat = *mi as f64 / bc1;
                let v_hat = *vi as f64 / bc2;
                *w -= (c.lr as f64 * m_hat / (v_hat.sqrt() + c.eps as f64)) as f32;
            }
        }
        Ok(())
    }
}
