//! Central finite-difference gradient checker.
//!
//! The checker only ever calls the forward pass. The output is contracted
//! with a fixed random cotangent `c` in f64, `f(x) = Σ c·y(x)`, and compared
//! against the analytic vector-Jacobian product seeded with the same `c`.
//! The perturbation actually applied is measured as `(x+ε) − (x−ε)` in f32,
//! which removes representation error from the step.
//!
//! Errors are normwise per input tensor: `|a_j − n_j| / max_k max(|a_k|, |n_k|)`.
//! Elementwise relative error is dominated by f32 rounding in the forward
//! pass for entries whose gradient is small against the rest of the tensor.

use rand::Rng as _;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over inputs and elements of `|a − n|` divided by the input's gradient scale
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f32,
    /// Lower bound on the gradient scale; below it errors are absolute.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-3, floor: 1e-6, seed: 0 }
    }
}

fn contract(y: &Tensor, c: &[f64]) -> f64 {
    y.data().iter().zip(c).map(|(&a, &b)| a as f64 * b).sum()
}

/// Check the gradients of `build` with respect to every element of `inputs`.
/// `build` receives the inputs as trainable leaves and returns any output.
pub fn check_gradients<F>(inputs: &[Tensor], build: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<Tensor> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).clone())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let mut rng = stream_rng(opts.seed, 0x6772_6164);
    let cot: Vec<f64> = (0..g.value(out).numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let seed = Tensor::new(g.shape(out).to_vec(), cot.iter().map(|&v| v as f32).collect())?;
    // the f32 seed is what the analytic pass sees; use the same values in f64
    let cot: Vec<f64> = seed.data().iter().map(|&v| v as f64).collect();
    let grads = g.backward_from(out, seed)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut xs: Vec<Tensor> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        let mut numeric = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            let xp = x0 + opts.eps;
            let xm = x0 - opts.eps;
            xs[i].data_mut()[j] = xp;
            let fp = contract(&eval(&xs)?, &cot);
            xs[i].data_mut()[j] = xm;
            let fm = contract(&eval(&xs)?, &cot);
            xs[i].data_mut()[j] = x0;
            numeric.push((fp - fm) / (xp as f64 - xm as f64));
        }
        let scale = analytic
            .data()
            .iter()
            .zip(&numeric)
            .fold(opts.floor, |m, (&a, &n)| m.max((a as f64).abs()).max(n.abs()));
        for (j, &n) in numeric.iter().enumerate() {
            let a = analytic.data()[j] as f64;
            let err = (a - n).abs() / scale;
            report.checked += 1;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = err;
                report.worst_input = i;
                report.worst_index = j;
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    Ok(report)
}
