//! Transformer denoiser over weight tokens, predicting clean tokens.
//!
//! Token `i` (width `w_i`) gets its own linear projection into the model
//! width and back out, a learned positional embedding is added, and the
//! diffusion time enters as one extra token (or, in [`TimeMode::Add`], is
//! added to every token). Blocks are pre-norm: `x + attn(ln(x))` followed by
//! `x + ffn(ln(x))` with a GELU feed-forward.

use serde::{Deserialize, Serialize};
use wsd_tensor::{stream_rng, Graph, Tensor, Var};
use wsd_weights::TokenLayout;

use crate::error::{DiffusionError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    /// One appended token whose output is dropped.
    Token,
    /// Added to every weight token.
    Add,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub blocks: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ffn_hidden: usize,
    pub time_mode: TimeMode,
}

impl DenoiserConfig {
    pub fn desk() -> Self {
        Self { blocks: 4, heads: 4, d_model: 128, ffn_hidden: 256, time_mode: TimeMode::Token }
    }

    pub fn paper() -> Self {
        Self { blocks: 12, heads: 16, d_model: 1024, ffn_hidden: 2048, time_mode: TimeMode::Token }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.heads == 0 || self.d_model == 0 || self.ffn_hidden == 0 {
            return Err(DiffusionError::Config(format!("degenerate denoiser {self:?}")));
        }
        if self.d_model % self.heads != 0 || self.d_model % 2 != 0 {
            return Err(DiffusionError::Config(format!(
                "d_model {} must be even and divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// `[sin(t·f_0), …, sin(t·f_{d/2−1}), cos(t·f_0), …]` with
/// `f_i = 10000^(−i/(d/2))`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut out = vec![0.0f32; dim];
    for i in 0..half {
        let f = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (t as f64 * f).sin() as f32;
        out[half + i] = (t as f64 * f).cos() as f32;
    }
    out
}

/// Named parameters in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub layout: TokenLayout,
    pub params: Vec<(String, Tensor)>,
}

struct Init {
    rng: wsd_tensor::Rng,
    params: Vec<(String, Tensor)>,
}

impl Init {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let bound = 1.0 / (fan_in as f32).sqrt();
        self.params.push((format!("{name}.w"), Tensor::uniform([fan_in, fan_out], -bound, bound, &mut self.rng)));
        self.params.push((format!("{name}.b"), Tensor::zeros([fan_out])));
    }

    fn norm(&mut self, name: &str, d: usize) {
        self.params.push((format!("{name}.g"), Tensor::full([d], 1.0)));
        self.params.push((format!("{name}.b"), Tensor::zeros([d])));
    }
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, layout: TokenLayout, seed: u64) -> Result<Self> {
        config.validate()?;
        if layout.is_empty() {
            return Err(DiffusionError::Layout("layout has no tokens".into()));
        }
        let d = config.d_model;
        let mut init = Init { rng: stream_rng(seed, 0xd1f), params: Vec::new() };
        for (i, &w) in layout.widths.iter().enumerate() {
            init.linear(&format!("proj.{i}"), w, d);
        }
        let pos = Tensor::randn([layout.len(), d], 0.02, &mut init.rng);
        init.params.push(("pos".into(), pos));
        init.linear("time.0", d, d);
        init.linear("time.1", d, d);
        for b in 0..config.blocks {
            init.norm(&format!("block.{b}.ln1"), d);
            for m in ["q", "k", "v", "o"] {
                init.linear(&format!("block.{b}.attn.{m}"), d, d);
            }
            init.norm(&format!("block.{b}.ln2"), d);
            init.linear(&format!("block.{b}.ffn.0"), d, config.ffn_hidden);
            init.linear(&format!("block.{b}.ffn.1"), config.ffn_hidden, d);
        }
        init.norm("final", d);
        for (i, &w) in layout.widths.iter().enumerate() {
            init.linear(&format!("unproj.{i}"), d, w);
        }
        Ok(Self { config, layout, params: init.params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Width of the concatenated token vector (dimension plus padding).
    pub fn width(&self) -> usize {
        self.layout.widths.iter().sum()
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(DiffusionError::Config(format!("{} tensors for {} parameters", tensors.len(), self.params.len())));
        }
        for ((name, p), t) in self.params.iter_mut().zip(tensors) {
            if p.shape() != t.shape() {
                return Err(DiffusionError::Config(format!("{name}: shape {:?}, got {:?}", p.shape(), t.shape())));
            }
            *p = t;
        }
        Ok(())
    }

    /// Parameters as graph variables, in order.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|(_, t)| if trainable { g.param(t.clone()) } else { g.input(t.clone()) }).collect()
    }

    /// `x: [B, W]` concatenated noisy tokens → `[B, W]` predicted clean tokens.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var, timesteps: &[usize]) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let width = self.width();
        if shape.len() != 2 || shape[1] != width || shape[0] != timesteps.len() {
            return Err(DiffusionError::Layout(format!(
                "denoiser input {shape:?} with {} timesteps, expected [B, {width}]",
                timesteps.len()
            )));
        }
        if vars.len() != self.params.len() {
            return Err(DiffusionError::Config(format!("{} vars for {} parameters", vars.len(), self.params.len())));
        }
        let b = shape[0];
        let d = self.config.d_model;
        let n = self.layout.len();
        let mut p = vars.iter().copied();
        let mut next = || p.next().expect("parameter count checked");
        let linear = |g: &mut Graph, x: Var, w: Var, bias: Var| -> Result<Var> {
            let y = g.matmul(x, w)?;
            Ok(g.add(y, bias)?)
        };

        let mut tokens = Vec::with_capacity(n + 1);
        let mut off = 0;
        for &w in &self.layout.widths {
            let (pw, pb) = (next(), next());
            let xi = g.slice(x, 1, off, off + w)?;
            off += w;
            let h = linear(g, xi, pw, pb)?;
            tokens.push(g.reshape(h, &[b, 1, d])?);
        }
        let pos = next();
        let seq = g.concat(&tokens, 1)?;
        let seq = g.add(seq, pos)?;

        let emb: Vec<f32> = timesteps.iter().flat_map(|&t| time_embedding(t, d)).collect();
        let emb = g.input(Tensor::new([b, d], emb)?);
        let (w0, b0, w1, b1) = (next(), next(), next(), next());
        let te = linear(g, emb, w0, b0)?;
        let te = g.gelu(te)?;
        let te = linear(g, te, w1, b1)?;
        let te = g.reshape(te, &[b, 1, d])?;
        let (mut h, len) = match self.config.time_mode {
            TimeMode::Token => (g.concat(&[seq, te], 1)?, n + 1),
            TimeMode::Add => (g.add(seq, te)?, n),
        };

        let heads = self.config.heads;
        let dh = d / heads;
        for _ in 0..self.config.blocks {
            let (g1, be1) = (next(), next());
            let a = g.layer_norm(h, g1, be1, 1e-5)?;
            let mut qkv = Vec::with_capacity(3);
            for _ in 0..3 {
                let (w, bias) = (next(), next());
                let y = linear(g, a, w, bias)?;
                let y = g.reshape(y, &[b, len, heads, dh])?;
                let y = g.permute(y, &[0, 2, 1, 3])?;
                qkv.push(g.reshape(y, &[b * heads, len, dh])?);
            }
            let kt = g.transpose(qkv[1])?;
            let scores = g.matmul(qkv[0], kt)?;
            let scores = g.scale(scores, 1.0 / (dh as f32).sqrt())?;
            let attn = g.softmax(scores)?;
            let ctx = g.matmul(attn, qkv[2])?;
            let ctx = g.reshape(ctx, &[b, heads, len, dh])?;
            let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = g.reshape(ctx, &[b, len, d])?;
            let (wo, bo) = (next(), next());
            let o = linear(g, ctx, wo, bo)?;
            h = g.add(h, o)?;

            let (g2, be2) = (next(), next());
            let a = g.layer_norm(h, g2, be2, 1e-5)?;
            let (f0w, f0b, f1w, f1b) = (next(), next(), next(), next());
            let f = linear(g, a, f0w, f0b)?;
            let f = g.gelu(f)?;
            let f = linear(g, f, f1w, f1b)?;
            h = g.add(h, f)?;
        }
        let (gf, bf) = (next(), next());
        let h = g.layer_norm(h, gf, bf, 1e-5)?;

        let mut outs = Vec::with_capacity(n);
        for (i, &w) in self.layout.widths.iter().enumerate() {
            let (uw, ub) = (next(), next());
            let hi = g.slice(h, 1, i, i + 1)?;
            let hi = g.reshape(hi, &[b, d])?;
            let y = linear(g, hi, uw, ub)?;
            debug_assert_eq!(g.shape(y), &[b, w]);
            outs.push(y);
        }
        Ok(g.concat(&outs, 1)?)
    }

    /// Predicted clean tokens for one concatenated token vector.
    pub fn denoise(&self, tokens: &[f32], t: usize) -> Result<Vec<f32>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.input(Tensor::new([1, tokens.len()], tokens.to_vec())?);
        let y = self.forward(&mut g, &vars, x, &[t])?;
        Ok(g.value(y).data().to_vec())
    }
}

/// Anything that predicts the clean standardized vector from a noisy one.
pub trait X0Predictor {
    /// Length of the standardized vectors.
    fn dim(&self) -> usize;
    fn predict_x0(&self, x_t: &[f32], t: usize) -> Result<Vec<f32>>;
}

impl X0Predictor for Denoiser {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn predict_x0(&self, x_t: &[f32], t: usize) -> Result<Vec<f32>> {
        if x_t.len() != self.layout.dim {
            return Err(DiffusionError::Layout(format!("vector of length {}, layout dimension {}", x_t.len(), self.layout.dim)));
        }
        let mut padded = x_t.to_vec();
        padded.resize(self.width(), 0.0);
        let mut out = self.denoise(&padded, t)?;
        out.truncate(self.layout.dim);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use wsd_weights::LayerShape;

    fn small() -> Denoiser {
        let layout = TokenLayout::layerwise(&[LayerShape::conv(3, 2, 3), LayerShape::conv(4, 3, 1), LayerShape::conv(2, 4, 3)]);
        let cfg = DenoiserConfig { blocks: 2, heads: 2, d_model: 16, ffn_hidden: 24, time_mode: TimeMode::Token };
        Denoiser::new(cfg, layout, 1).unwrap()
    }

    #[test]
    fn output_width_matches_input() {
        let m = small();
        let x = vec![0.3f32; m.width()];
        assert_eq!(m.denoise(&x, 5).unwrap().len(), m.width());
    }

    #[test]
    fn zero_weights_predict_zero() {
        let mut m = small();
        let zeros = m.params.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect();
        m.set_tensors(zeros).unwrap();
        let x: Vec<f32> = (0..m.width()).map(|i| i as f32 * 0.01).collect();
        assert!(m.denoise(&x, 7).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn time_changes_output() {
        for mode in [TimeMode::Token, TimeMode::Add] {
            let mut m = small();
            m.config.time_mode = mode;
            let x: Vec<f32> = (0..m.width()).map(|i| (i as f32 * 0.37).sin()).collect();
            let a = m.denoise(&x, 10).unwrap();
            let b = m.denoise(&x, 900).unwrap();
            let d: f32 = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum();
            assert!(d > 0.0);
            assert_eq!(m.denoise(&x, 10).unwrap(), a);
        }
    }

    #[test]
    fn bad_input_is_a_layout_error() {
        let m = small();
        assert!(matches!(m.denoise(&[0.0; 3], 1), Err(DiffusionError::Layout(_))));
        assert!(DenoiserConfig { heads: 3, ..DenoiserConfig::desk() }.validate().is_err());
    }

    #[test]
    fn embedding_layout() {
        let e = time_embedding(0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }
}
