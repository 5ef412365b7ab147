//! Depth-sorted alpha compositing of projected Gaussians.
//!
//! Forward: for each pixel `p`, Gaussians sorted front to back by camera
//! depth contribute `σ_i = min(α_i·exp(−½ dᵀ Σ₂ᴰ⁻¹ d), σ_max)` and are skipped
//! when `α_i·exp(..) < σ_min`; color `Σ c_i σ_i T_i + T·bg` with
//! `T_i = Π_{j<i}(1 − σ_j)` and opacity `1 − T`.
//!
//! Backward uses the back-to-front recurrences
//! `B_{k−1} = c_k σ_k + (1 − σ_k) B_k` (starting at `bg`) and
//! `P_{k−1} = (1 − σ_k) P_k` (starting at 1), so that
//! `∂C/∂σ_k = T_k (c_k − B_k)` and `∂O/∂σ_k = T_k P_k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wsd_tensor::Tensor;

use crate::camera::Camera;
use crate::error::{Result, SplatError};
use crate::gaussian::{covariance_from_unit, mat_mul, normalize_quat, quat_to_rot, quat_to_rot_vjp, transpose, Gaussian, Mat3};
use crate::sh::{sh_basis, sh_raw, SH_COEFFS, SH_LEN};

/// Row bands used to split per-pixel work. Fixed so gradient sums are
/// reduced in the same order whatever the thread count.
const BANDS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterConfig {
    pub background: [f32; 3],
    /// Added to every 2D covariance (pixels²) before inversion.
    pub low_pass: f64,
    pub max_sigma: f64,
    pub min_sigma: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self { background: [0.0; 3], low_pass: 0.3, max_sigma: 0.999, min_sigma: 1.0 / 255.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub mean: [f64; 2],
    /// Without the low-pass term.
    pub cov: [[f64; 2]; 2],
    pub depth: f64,
}

/// Orthographic projection of a Gaussian's mean and covariance to pixels.
pub fn project(g: &Gaussian, camera: &Camera) -> Result<Projected> {
    let (q, _) = normalize_quat(g.quat).ok_or(SplatError::ZeroQuaternion { index: 0 })?;
    let sigma = covariance_from_unit(g.scale.map(|v| v as f64), q);
    let (mean, depth) = camera.project_point(g.position.map(|v| v as f64));
    Ok(Projected { mean, cov: screen_cov(&sigma, camera), depth })
}

fn screen_cov(sigma: &Mat3, camera: &Camera) -> [[f64; 2]; 2] {
    let r = &camera.rotation;
    let c = mat_mul(&mat_mul(r, sigma), &transpose(r));
    let s2 = camera.pixel_scale * camera.pixel_scale;
    let off = 0.5 * s2 * (c[0][1] + c[1][0]);
    [[s2 * c[0][0], off], [off, s2 * c[1][1]]]
}

/// Borrowed structure-of-arrays view of `n` Gaussians.
#[derive(Clone, Copy, Debug)]
pub struct GaussianParams<'a> {
    pub positions: &'a [f32],
    pub scales: &'a [f32],
    pub quats: &'a [f32],
    pub opacity: &'a [f32],
    pub sh: &'a [f32],
}

impl<'a> GaussianParams<'a> {
    pub fn len(&self) -> usize {
        self.opacity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        let checks = [
            ("positions", self.positions.len(), 3 * n),
            ("scales", self.scales.len(), 3 * n),
            ("quats", self.quats.len(), 4 * n),
            ("sh", self.sh.len(), SH_LEN * n),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(SplatError::Shape(format!("{name}: {got} values for {n} gaussians, expected {want}")));
            }
        }
        Ok(())
    }
}

/// Owned structure-of-arrays Gaussians.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianSet {
    pub positions: Vec<f32>,
    pub scales: Vec<f32>,
    pub quats: Vec<f32>,
    pub opacity: Vec<f32>,
    pub sh: Vec<f32>,
}

impl GaussianSet {
    pub fn from_gaussians(gs: &[Gaussian]) -> Self {
        let mut s = Self::default();
        for g in gs {
            s.positions.extend_from_slice(&g.position);
            s.scales.extend_from_slice(&g.scale);
            s.quats.extend_from_slice(&g.quat);
            s.opacity.push(g.opacity);
            s.sh.extend_from_slice(&g.sh);
        }
        s
    }

    pub fn params(&self) -> GaussianParams<'_> {
        GaussianParams {
            positions: &self.positions,
            scales: &self.scales,
            quats: &self.quats,
            opacity: &self.opacity,
            sh: &self.sh,
        }
    }

    pub fn len(&self) -> usize {
        self.opacity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity.is_empty()
    }
}

/// Gradients for each parameter array of [`GaussianParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub positions: Vec<f32>,
    pub scales: Vec<f32>,
    pub quats: Vec<f32>,
    pub opacity: Vec<f32>,
    pub sh: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Row-major `H×W×3`.
    pub rgb: Vec<f32>,
    /// Row-major `H×W`.
    pub opacity: Vec<f32>,
}

impl RenderOutput {
    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// `[4, H, W]` tensor: rgb planes followed by opacity.
    pub fn to_chw(&self) -> Tensor {
        let hw = self.width * self.height;
        let mut data = vec![0.0; 4 * hw];
        for p in 0..hw {
            for c in 0..3 {
                data[c * hw + p] = self.rgb[p * 3 + c];
            }
            data[3 * hw + p] = self.opacity[p];
        }
        Tensor::new([4, self.height, self.width], data).expect("sizes agree")
    }

    pub fn from_chw(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 4 {
            return Err(SplatError::Shape(format!("expected [4, H, W], got {s:?}")));
        }
        let (height, width) = (s[1], s[2]);
        let hw = width * height;
        let d = t.data();
        let mut rgb = vec![0.0; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                rgb[p * 3 + c] = d[c * hw + p];
            }
        }
        Ok(Self { width, height, rgb, opacity: d[3 * hw..].to_vec() })
    }
}

/// Per-Gaussian quantities shared by every pixel.
#[derive(Clone, Debug)]
struct Prepared {
    mean: [f64; 2],
    /// Inverse of the regularized 2D covariance, `(a, b, c)` for `[[a, b], [b, c]]`.
    conic: [f64; 3],
    alpha: f64,
    color: [f64; 3],
    /// Per channel: color was inside `[0, 1]` before clamping.
    color_live: [bool; 3],
    bbox: Option<[usize; 4]>,
}

struct Scene {
    prepared: Vec<Prepared>,
    /// CSR lists of Gaussian indices per pixel, front to back.
    offsets: Vec<usize>,
    indices: Vec<u32>,
    width: usize,
    height: usize,
}

fn prepare(params: &GaussianParams, camera: &Camera, cfg: &RasterConfig) -> Result<Scene> {
    params.validate()?;
    camera.validate()?;
    let n = params.len();
    let basis = sh_basis(camera.forward());
    let (w, h) = (camera.width, camera.height);
    let mut prepared = Vec::with_capacity(n);
    let mut depth = Vec::with_capacity(n);
    for i in 0..n {
        let q4 = [params.quats[4 * i], params.quats[4 * i + 1], params.quats[4 * i + 2], params.quats[4 * i + 3]];
        let (q, _) = normalize_quat(q4).ok_or(SplatError::ZeroQuaternion { index: i })?;
        let s = [0, 1, 2].map(|k| params.scales[3 * i + k] as f64);
        let sigma = covariance_from_unit(s, q);
        let p = [0, 1, 2].map(|k| params.positions[3 * i + k] as f64);
        let (mean, d) = camera.project_point(p);
        let mut cov = screen_cov(&sigma, camera);
        cov[0][0] += cfg.low_pass;
        cov[1][1] += cfg.low_pass;
        let mut det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        if det <= 1e-12 {
            cov[0][0] += 0.3;
            cov[1][1] += 0.3;
            det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        }
        let conic = [cov[1][1] / det, -cov[0][1] / det, cov[0][0] / det];
        let alpha = params.opacity[i] as f64;
        let raw = sh_raw(&params.sh[i * SH_LEN..(i + 1) * SH_LEN], &basis);
        let color = raw.map(|v| v.clamp(0.0, 1.0));
        let color_live = raw.map(|v| v > 0.0 && v < 1.0);

        // α·exp(−½m) ≥ σ_min  ⇔  m ≤ 2 ln(α/σ_min); the box bounds that ellipse
        let bbox = if alpha > 0.0 && alpha >= cfg.min_sigma {
            let r2 = 2.0 * (alpha / cfg.min_sigma).ln();
            if !r2.is_finite() {
                Some([0, w - 1, 0, h - 1])
            } else {
                let hx = (r2 * cov[0][0]).sqrt();
                let hy = (r2 * cov[1][1]).sqrt();
                let x0 = (mean[0] - hx - 0.5).floor() - 1.0;
                let x1 = (mean[0] + hx - 0.5).ceil() + 1.0;
                let y0 = (mean[1] - hy - 0.5).floor() - 1.0;
                let y1 = (mean[1] + hy - 0.5).ceil() + 1.0;
                if !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
                    Some([0, w - 1, 0, h - 1])
                } else if x1 < 0.0 || y1 < 0.0 || x0 > (w - 1) as f64 || y0 > (h - 1) as f64 {
                    None
                } else {
                    let clampi = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
                    Some([clampi(x0, w - 1), clampi(x1, w - 1), clampi(y0, h - 1), clampi(y1, h - 1)])
                }
            }
        } else {
            None
        };
        prepared.push(Prepared { mean, conic, alpha, color, color_live, bbox });
        depth.push(d);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| depth[a].total_cmp(&depth[b]).then(a.cmp(&b)));

    let mut counts = vec![0usize; w * h + 1];
    for &i in &order {
        if let Some([x0, x1, y0, y1]) = prepared[i].bbox {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    counts[y * w + x + 1] += 1;
                }
            }
        }
    }
    for p in 0..w * h {
        counts[p + 1] += counts[p];
    }
    let offsets = counts;
    let mut fill = offsets.clone();
    let mut indices = vec![0u32; offsets[w * h]];
    for &i in &order {
        if let Some([x0, x1, y0, y1]) = prepared[i].bbox {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y * w + x;
                    indices[fill[p]] = i as u32;
                    fill[p] += 1;
                }
            }
        }
    }
    Ok(Scene { prepared, offsets, indices, width: w, height: h })
}

/// One Gaussian's contribution at one pixel.
#[derive(Clone, Copy)]
struct Hit {
    index: usize,
    sigma: f64,
    /// `exp(−½ dᵀQd)`
    falloff: f64,
    transmittance: f64,
    clamped: bool,
    d: [f64; 2],
}

impl Scene {
    fn hits(&self, row: usize, col: usize, cfg: &RasterConfig, out: &mut Vec<Hit>) -> f64 {
        out.clear();
        let p = row * self.width + col;
        let px = [col as f64 + 0.5, row as f64 + 0.5];
        let mut t = 1.0;
        for &gi in &self.indices[self.offsets[p]..self.offsets[p + 1]] {
            let g = &self.prepared[gi as usize];
            let d = [px[0] - g.mean[0], px[1] - g.mean[1]];
            let [a, b, c] = g.conic;
            let m = a * d[0] * d[0] + 2.0 * b * d[0] * d[1] + c * d[1] * d[1];
            let falloff = (-0.5 * m).exp();
            let raw = g.alpha * falloff;
            if raw < cfg.min_sigma {
                continue;
            }
            let clamped = raw > cfg.max_sigma;
            let sigma = if clamped { cfg.max_sigma } else { raw };
            out.push(Hit { index: gi as usize, sigma, falloff, transmittance: t, clamped, d });
            t *= 1.0 - sigma;
        }
        t
    }

    fn shade(&self, row: usize, col: usize, cfg: &RasterConfig, hits: &mut Vec<Hit>) -> ([f64; 3], f64) {
        let t = self.hits(row, col, cfg, hits);
        let mut rgb = [0.0; 3];
        for h in hits.iter() {
            let c = &self.prepared[h.index].color;
            for ch in 0..3 {
                rgb[ch] += c[ch] * h.sigma * h.transmittance;
            }
        }
        for ch in 0..3 {
            rgb[ch] += t * cfg.background[ch] as f64;
        }
        (rgb, 1.0 - t)
    }
}

fn band_rows(height: usize) -> Vec<(usize, usize)> {
    let bands = BANDS.min(height);
    (0..bands).map(|b| (b * height / bands, (b + 1) * height / bands)).collect()
}

pub fn rasterize_params(params: &GaussianParams, camera: &Camera, cfg: &RasterConfig) -> Result<RenderOutput> {
    let scene = prepare(params, camera, cfg)?;
    let (w, h) = (scene.width, scene.height);
    let mut rgb = vec![0.0f32; w * h * 3];
    let mut opacity = vec![0.0f32; w * h];
    rgb.par_chunks_mut(w * 3).zip(opacity.par_chunks_mut(w)).enumerate().for_each(|(row, (rgb_row, op_row))| {
        let mut hits = Vec::new();
        for col in 0..w {
            let (c, o) = scene.shade(row, col, cfg, &mut hits);
            for ch in 0..3 {
                rgb_row[col * 3 + ch] = c[ch] as f32;
            }
            op_row[col] = o as f32;
        }
    });
    Ok(RenderOutput { width: w, height: h, rgb, opacity })
}

pub fn rasterize(gaussians: &[Gaussian], camera: &Camera, cfg: &RasterConfig) -> Result<RenderOutput> {
    let set = GaussianSet::from_gaussians(gaussians);
    rasterize_params(&set.params(), camera, cfg)
}

/// Screen-space gradient slots per Gaussian.
const MEAN_X: usize = 0;
const MEAN_Y: usize = 1;
const CON_A: usize = 2;
const CON_B: usize = 3;
const CON_C: usize = 4;
const ALPHA: usize = 5;
const COLOR: usize = 6;
const SLOTS: usize = 9;

/// Vector-Jacobian product of [`rasterize_params`] for upstream gradients
/// on rgb (`H×W×3`) and opacity (`H×W`).
pub fn rasterize_backward(
    params: &GaussianParams,
    camera: &Camera,
    cfg: &RasterConfig,
    grad_rgb: &[f32],
    grad_opacity: &[f32],
) -> Result<ParamGrads> {
    let scene = prepare(params, camera, cfg)?;
    let (w, h) = (scene.width, scene.height);
    if grad_rgb.len() != w * h * 3 || grad_opacity.len() != w * h {
        return Err(SplatError::Shape(format!(
            "upstream gradients have {} rgb and {} opacity values for a {w}x{h} image",
            grad_rgb.len(),
            grad_opacity.len()
        )));
    }
    let n = params.len();
    let bg = cfg.background.map(|v| v as f64);

    let partials: Vec<Vec<f64>> = band_rows(h)
        .into_par_iter()
        .map(|(r0, r1)| {
            let mut acc = vec![0.0f64; n * SLOTS];
            let mut hits = Vec::new();
            for row in r0..r1 {
                for col in 0..w {
                    let p = row * w + col;
                    let gc = [0, 1, 2].map(|ch| grad_rgb[p * 3 + ch] as f64);
                    let go = grad_opacity[p] as f64;
                    if gc == [0.0; 3] && go == 0.0 {
                        continue;
                    }
                    scene.hits(row, col, cfg, &mut hits);
                    let mut behind = bg;
                    let mut pass = 1.0;
                    for hit in hits.iter().rev() {
                        let g = &scene.prepared[hit.index];
                        let a = &mut acc[hit.index * SLOTS..(hit.index + 1) * SLOTS];
                        let t = hit.transmittance;
                        let mut g_sigma = go * t * pass;
                        for ch in 0..3 {
                            g_sigma += gc[ch] * t * (g.color[ch] - behind[ch]);
                            a[COLOR + ch] += gc[ch] * hit.sigma * t;
                        }
                        for ch in 0..3 {
                            behind[ch] = g.color[ch] * hit.sigma + (1.0 - hit.sigma) * behind[ch];
                        }
                        pass *= 1.0 - hit.sigma;
                        if hit.clamped {
                            continue;
                        }
                        a[ALPHA] += g_sigma * hit.falloff;
                        // σ = α·exp(−½m), m = a dx² + 2b dx dy + c dy², d = pixel − mean
                        let g_m = -0.5 * g_sigma * hit.sigma;
                        let [ca, cb, cc] = g.conic;
                        let [dx, dy] = hit.d;
                        a[MEAN_X] -= g_m * 2.0 * (ca * dx + cb * dy);
                        a[MEAN_Y] -= g_m * 2.0 * (cb * dx + cc * dy);
                        a[CON_A] += g_m * dx * dx;
                        a[CON_B] += g_m * 2.0 * dx * dy;
                        a[CON_C] += g_m * dy * dy;
                    }
                }
            }
            acc
        })
        .collect();
    let mut acc = vec![0.0f64; n * SLOTS];
    for part in &partials {
        for (a, b) in acc.iter_mut().zip(part) {
            *a += b;
        }
    }

    let basis = sh_basis(camera.forward());
    let rc = &camera.rotation;
    let s2 = camera.pixel_scale * camera.pixel_scale;
    let mut out = ParamGrads {
        positions: vec![0.0; 3 * n],
        scales: vec![0.0; 3 * n],
        quats: vec![0.0; 4 * n],
        opacity: vec![0.0; n],
        sh: vec![0.0; SH_LEN * n],
    };
    for i in 0..n {
        let a = &acc[i * SLOTS..(i + 1) * SLOTS];
        let g = &scene.prepared[i];

        for k in 0..3 {
            let gp = camera.pixel_scale * (rc[0][k] * a[MEAN_X] + rc[1][k] * a[MEAN_Y]);
            out.positions[3 * i + k] = gp as f32;
        }
        out.opacity[i] = a[ALPHA] as f32;
        for ch in 0..3 {
            if g.color_live[ch] {
                for k in 0..SH_COEFFS {
                    out.sh[i * SH_LEN + k * 3 + ch] = (a[COLOR + ch] * basis[k]) as f32;
                }
            }
        }

        // conic → covariance: dΣ₂ = −Q·G·Q with G the symmetric conic gradient
        let q2 = [[g.conic[0], g.conic[1]], [g.conic[1], g.conic[2]]];
        let gq = [[a[CON_A], 0.5 * a[CON_B]], [0.5 * a[CON_B], a[CON_C]]];
        let mut gcov = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                let mut v = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        v += q2[r][k] * gq[k][l] * q2[l][c];
                    }
                }
                gcov[r][c] = -v;
            }
        }
        // screen covariance = s²·(Rc Σ Rcᵀ)[0..2, 0..2]
        let mut g_cam = [[0.0; 3]; 3];
        for r in 0..2 {
            for c in 0..2 {
                g_cam[r][c] = s2 * gcov[r][c];
            }
        }
        let g_sigma = mat_mul(&mat_mul(&transpose(rc), &g_cam), rc);

        let q4 = [params.quats[4 * i], params.quats[4 * i + 1], params.quats[4 * i + 2], params.quats[4 * i + 3]];
        let (qn, qnorm) = normalize_quat(q4).expect("checked in prepare");
        let rot = quat_to_rot(qn);
        let s = [0, 1, 2].map(|k| params.scales[3 * i + k] as f64);
        // Σ = M Mᵀ with M = R·diag(s): dM = (G + Gᵀ) M
        let mut g_rot = [[0.0; 3]; 3];
        let mut g_s = [0.0; 3];
        for r in 0..3 {
            for k in 0..3 {
                let gm: f64 = (0..3).map(|c| (g_sigma[r][c] + g_sigma[c][r]) * rot[c][k] * s[k]).sum();
                g_s[k] += gm * rot[r][k];
                g_rot[r][k] = gm * s[k];
            }
        }
        for k in 0..3 {
            out.scales[3 * i + k] = g_s[k] as f32;
        }
        let g_qn = quat_to_rot_vjp(qn, &g_rot);
        let dot: f64 = (0..4).map(|k| qn[k] * g_qn[k]).sum();
        for k in 0..4 {
            out.quats[4 * i + k] = ((g_qn[k] - qn[k] * dot) / qnorm) as f32;
        }
    }
    Ok(out)
}
