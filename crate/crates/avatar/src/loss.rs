//! Photometric training loss: L1, structural (1 − SSIM), a frozen random
//! conv-feature perceptual proxy and an opacity-vs-mask L1.

use serde::{Deserialize, Serialize};
use wsd_tensor::{stream_rng, Graph, Tensor, Var};

use crate::error::{AvatarError, Result};

const SSIM_SIZE: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f32 = 0.01 * 0.01;
const SSIM_C2: f32 = 0.03 * 0.03;
pub const PERCEPTUAL_SEED: u64 = 7;
const PERCEPTUAL_CHANNELS: [usize; 4] = [3, 8, 16, 32];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pixel: f32,
    pub structure: f32,
    pub perceptual: f32,
    pub mask: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { pixel: 1.0, structure: 0.1, perceptual: 0.01, mask: 0.1 }
    }
}

/// Unweighted component values and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f32,
    pub l1: f32,
    /// `1 − SSIM`
    pub ssim: f32,
    pub perc: f32,
    pub mask: f32,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        [self.total, self.l1, self.ssim, self.perc, self.mask].iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub l1: Var,
    pub ssim: Var,
    pub perc: Var,
    pub mask: Var,
}

impl LossVars {
    pub fn terms(&self, g: &Graph) -> LossTerms {
        LossTerms {
            total: g.value(self.total).item(),
            l1: g.value(self.l1).item(),
            ssim: g.value(self.ssim).item(),
            perc: g.value(self.perc).item(),
            mask: g.value(self.mask).item(),
        }
    }
}

fn ssim_window() -> Tensor {
    let c = (SSIM_SIZE / 2) as f64;
    let g1: Vec<f64> = (0..SSIM_SIZE).map(|i| (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g1.iter().sum();
    let mut w = Vec::with_capacity(SSIM_SIZE * SSIM_SIZE);
    for a in &g1 {
        for b in &g1 {
            w.push((a * b / (s * s)) as f32);
        }
    }
    Tensor::new([1, 1, SSIM_SIZE, SSIM_SIZE], w).expect("window size")
}

/// Mean SSIM between two `[C, H, W]` images (zero-padded Gaussian window).
pub fn ssim(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let shape = g.shape(a).to_vec();
    if shape.len() != 3 || g.shape(b) != shape.as_slice() {
        return Err(AvatarError::Config(format!("ssim needs two equal [C, H, W] images, got {shape:?} and {:?}", g.shape(b))));
    }
    let planes = [shape[0], 1, shape[1], shape[2]];
    let x = g.reshape(a, &planes)?;
    let y = g.reshape(b, &planes)?;
    let w = g.input(ssim_window());
    let pad = SSIM_SIZE / 2;
    let blur = |g: &mut Graph, v: Var| g.conv2d(v, w, None, 1, pad);
    let mx = blur(g, x)?;
    let my = blur(g, y)?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let exx = blur(g, xx)?;
    let eyy = blur(g, yy)?;
    let exy = blur(g, xy)?;
    let mx2 = g.mul(mx, mx)?;
    let my2 = g.mul(my, my)?;
    let mxy = g.mul(mx, my)?;
    let vx = g.sub(exx, mx2)?;
    let vy = g.sub(eyy, my2)?;
    let cxy = g.sub(exy, mxy)?;

    let n1 = g.scale(mxy, 2.0)?;
    let n1 = g.add_scalar(n1, SSIM_C1)?;
    let n2 = g.scale(cxy, 2.0)?;
    let n2 = g.add_scalar(n2, SSIM_C2)?;
    let d1 = g.add(mx2, my2)?;
    let d1 = g.add_scalar(d1, SSIM_C1)?;
    let d2 = g.add(vx, vy)?;
    let d2 = g.add_scalar(d2, SSIM_C2)?;
    let num = g.mul(n1, n2)?;
    let den = g.mul(d1, d2)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map)?)
}

/// Frozen stride-2 3×3 conv stack (3→8→16→32, ReLU) with seeded weights.
#[derive(Clone, Debug)]
pub struct PerceptualProxy {
    kernels: Vec<Tensor>,
}

impl Default for PerceptualProxy {
    fn default() -> Self {
        Self::new(PERCEPTUAL_SEED)
    }
}

impl PerceptualProxy {
    pub fn new(seed: u64) -> Self {
        let kernels = PERCEPTUAL_CHANNELS
            .windows(2)
            .enumerate()
            .map(|(i, c)| {
                let fan_in = (c[0] * 9) as f32;
                let bound = (6.0 / fan_in).sqrt();
                Tensor::uniform([c[1], c[0], 3, 3], -bound, bound, &mut stream_rng(seed, i as u64))
            })
            .collect();
        Self { kernels }
    }

    /// Channel-normalized feature maps of a `[3, H, W]` image in `[0, 1]`.
    fn features(&self, g: &mut Graph, img: Var) -> Result<Vec<Var>> {
        let s = g.shape(img).to_vec();
        let x = g.reshape(img, &[1, s[0], s[1], s[2]])?;
        let x = g.scale(x, 2.0)?;
        let mut h = g.add_scalar(x, -1.0)?;
        let mut out = Vec::with_capacity(self.kernels.len());
        for k in &self.kernels {
            let kv = g.input(k.clone());
            let y = g.conv2d(h, kv, None, 2, 1)?;
            h = g.relu(y)?;
            let hs = g.shape(h).to_vec();
            let sq = g.mul(h, h)?;
            let n2 = g.sum_axis(sq, 1)?;
            let n2 = g.reshape(n2, &[1, 1, hs[2], hs[3]])?;
            let n2 = g.add_scalar(n2, 1e-10)?;
            let n = g.sqrt(n2)?;
            out.push(g.div(h, n)?);
        }
        Ok(out)
    }

    /// Mean over layers of the spatially averaged squared distance between
    /// unit-normalized features.
    pub fn distance(&self, g: &mut Graph, a: Var, b: Var) -> Result<Var> {
        let fa = self.features(g, a)?;
        let fb = self.features(g, b)?;
        let mut total: Option<Var> = None;
        for (x, y) in fa.into_iter().zip(fb) {
            let d = g.sub(x, y)?;
            let d2 = g.mul(d, d)?;
            let per_pixel = g.sum_axis(d2, 1)?;
            let m = g.mean(per_pixel)?;
            total = Some(match total {
                Some(t) => g.add(t, m)?,
                None => m,
            });
        }
        let total = total.expect("at least one layer");
        Ok(g.scale(total, 1.0 / self.kernels.len() as f32)?)
    }
}

/// Weighted loss for a rendered `[3, H, W]` image and `[1, H, W]` opacity
/// against ground truth. The perceptual term is skipped (reported as 0)
/// when its weight is zero.
pub fn training_loss(
    g: &mut Graph,
    rgb: Var,
    opacity: Var,
    gt_rgb: Var,
    mask: Var,
    weights: &LossWeights,
    proxy: &PerceptualProxy,
) -> Result<LossVars> {
    if g.shape(rgb) != g.shape(gt_rgb) || g.shape(opacity) != g.shape(mask) {
        return Err(AvatarError::Config(format!(
            "loss inputs differ in size: rendered {:?}/{:?}, target {:?}/{:?}",
            g.shape(rgb),
            g.shape(opacity),
            g.shape(gt_rgb),
            g.shape(mask)
        )));
    }
    let l1 = g.l1(rgb, gt_rgb)?;
    let s = ssim(g, rgb, gt_rgb)?;
    let neg = g.scale(s, -1.0)?;
    let dssim = g.add_scalar(neg, 1.0)?;
    let perc = if weights.perceptual != 0.0 {
        proxy.distance(g, rgb, gt_rgb)?
    } else {
        g.input(Tensor::scalar(0.0))
    };
    let mask_l1 = g.l1(opacity, mask)?;

    let mut total = g.scale(l1, weights.pixel)?;
    for (v, w) in [(dssim, weights.structure), (perc, weights.perceptual), (mask_l1, weights.mask)] {
        if w != 0.0 {
            let t = g.scale(v, w)?;
            total = g.add(total, t)?;
        }
    }
    Ok(LossVars { total, l1, ssim: dssim, perc, mask: mask_l1 })
}

/// Evaluate the loss terms on plain tensors.
pub fn loss_terms(
    rgb: &Tensor,
    opacity: &Tensor,
    gt_rgb: &Tensor,
    mask: &Tensor,
    weights: &LossWeights,
    proxy: &PerceptualProxy,
) -> Result<LossTerms> {
    let mut g = Graph::new();
    let vars = [rgb, opacity, gt_rgb, mask].map(|t| g.input(t.clone()));
    let l = training_loss(&mut g, vars[0], vars[1], vars[2], vars[3], weights, proxy)?;
    Ok(l.terms(&g))
}
