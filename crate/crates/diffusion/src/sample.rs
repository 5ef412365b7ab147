//! DDIM and ancestral samplers over any [`X0Predictor`].
//!
//! The sampler state is kept in `f64`; the predictor sees `f32`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use wsd_tensor::{derive_seed, stream_rng, Rng};
use wsd_weights::{LayerShape, Standardizer, WeightRecord};

use crate::error::{DiffusionError, Result};
use crate::model::X0Predictor;
use crate::schedule::Schedule;

pub const DEFAULT_DDIM_STEPS: usize = 50;

/// `τ_i = round(1 + (T−1)·i/(S−1))` for `i = 0..S`, ascending and distinct.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(DiffusionError::Config(format!("{steps} sampling steps for T = {total}")));
    }
    if steps == 1 {
        return Ok(vec![total]);
    }
    let ts: Vec<usize> =
        (0..steps).map(|i| (1.0 + (total - 1) as f64 * i as f64 / (steps - 1) as f64).round() as usize).collect();
    debug_assert!(ts.windows(2).all(|w| w[0] < w[1]));
    Ok(ts)
}

fn normal(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn predict(model: &dyn X0Predictor, x: &[f64], t: usize) -> Result<Vec<f64>> {
    let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
    let w = model.predict_x0(&xf, t)?;
    if w.len() != x.len() {
        return Err(DiffusionError::Layout(format!("predictor returned {} values for {}", w.len(), x.len())));
    }
    Ok(w.into_iter().map(f64::from).collect())
}

/// DDIM from `x_T ~ N(0, I)` down to `x_0` over `steps` timesteps.
pub fn ddim_sample(model: &dyn X0Predictor, schedule: &Schedule, steps: usize, eta: f64, rng: &mut Rng) -> Result<Vec<f32>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(DiffusionError::Config(format!("eta {eta} outside [0, 1]")));
    }
    let taus = ddim_timesteps(schedule.steps(), steps)?;
    let dim = model.dim();
    let mut x = normal(rng, dim);
    for i in (0..taus.len()).rev() {
        let t = taus[i];
        let prev = if i == 0 { 0 } else { taus[i - 1] };
        let (ab_t, ab_p) = (schedule.alpha_bar(t), schedule.alpha_bar(prev));
        let w = predict(model, &x, t)?;
        let z = normal(rng, dim);
        let (eps, sigma) = if 1.0 - ab_t <= 0.0 {
            (z.clone(), 0.0)
        } else {
            let e: Vec<f64> = x.iter().zip(&w).map(|(&xt, &wh)| (xt - ab_t.sqrt() * wh) / (1.0 - ab_t).sqrt()).collect();
            (e, eta * ((1.0 - ab_p) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_p).max(0.0).sqrt())
        };
        let c = (1.0 - ab_p - sigma * sigma).max(0.0).sqrt();
        for j in 0..dim {
            x[j] = ab_p.sqrt() * w[j] + c * eps[j] + sigma * z[j];
        }
    }
    Ok(x.into_iter().map(|v| v as f32).collect())
}

/// Ancestral sampling through every timestep with the posterior
/// `q(x_{t−1} | x_t, x̂₀)`.
pub fn ddpm_sample(model: &dyn X0Predictor, schedule: &Schedule, rng: &mut Rng) -> Result<Vec<f32>> {
    let dim = model.dim();
    let mut x = normal(rng, dim);
    for t in (1..=schedule.steps()).rev() {
        let (ab_t, ab_p, beta) = (schedule.alpha_bar(t), schedule.alpha_bar(t - 1), schedule.beta(t));
        let w = predict(model, &x, t)?;
        let z = normal(rng, dim);
        let cw = ab_p.sqrt() * beta / (1.0 - ab_t);
        let cx = schedule.alpha(t).sqrt() * (1.0 - ab_p) / (1.0 - ab_t);
        let sigma = ((1.0 - ab_p) / (1.0 - ab_t) * beta).sqrt();
        for j in 0..dim {
            x[j] = cw * w[j] + cx * x[j] + sigma * z[j];
        }
    }
    Ok(x.into_iter().map(|v| v as f32).collect())
}

/// Sampler settings for drawing weight records.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleConfig {
    pub steps: usize,
    pub eta: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { steps: DEFAULT_DDIM_STEPS, eta: 0.0, seed: 0 }
    }
}

/// Generator for sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: usize) -> Rng {
    stream_rng(derive_seed(seed, index as u64), 0x5a)
}

/// One standardized DDIM sample mapped back to weight space.
pub fn sample_record(
    model: &dyn X0Predictor,
    schedule: &Schedule,
    standardizer: &Standardizer,
    shapes: &[LayerShape],
    config: &SampleConfig,
    index: usize,
) -> Result<WeightRecord> {
    let z = ddim_sample(model, schedule, config.steps, config.eta, &mut sample_rng(config.seed, index))?;
    let w = standardizer.invert(&z)?;
    Ok(WeightRecord::from_flat(shapes, &w)?)
}
