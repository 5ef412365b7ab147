//! Stage-1 fitting of one identity's UNet from its multi-view frames.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use wsd_splat::{load_gray_png, load_rgb_png, rasterize_params, Camera, RasterConfig, RasterOp, RenderOutput};
use wsd_tensor::{stream_rng, AdamW, AdamWConfig, Graph, Tensor, TensorError};
use wsd_weights::{Layer, WeightRecord};

use crate::anchors::AnchorMap;
use crate::error::{io_err, AvatarError, Result};
use crate::heads::{decode_heads, decode_rows, select_texels, DecodedMap};
use crate::loss::{training_loss, LossTerms, LossWeights, PerceptualProxy};
use crate::posemaps::PoseMaps;
use crate::synth::{load_cameras, load_pose, Manifest};
use crate::template::{Pose, Template};
use crate::unet::{bind, check_record, unet_forward, UNetConfig};
use crate::world::WorldTransform;

const SAMPLE_STREAM: u64 = 0x5a3b;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub network: UNetConfig,
    pub loss: LossWeights,
    pub lr: f32,
    pub weight_decay: f32,
    /// Linear lr ramp from 0, perceptual term off.
    pub warmup_steps: usize,
    pub iterations: usize,
    /// Seeds both the shared initialization and the frame/camera sampler.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl FitConfig {
    pub fn desk() -> Self {
        Self {
            network: UNetConfig::desk(),
            loss: LossWeights::default(),
            lr: 1e-4,
            weight_decay: 0.0,
            warmup_steps: 300,
            iterations: 3000,
            seed: 0,
        }
    }

    pub fn paper() -> Self {
        Self { network: UNetConfig::paper(), warmup_steps: 30_000, iterations: 700_000, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let w = &self.loss;
        if [w.pixel, w.structure, w.perceptual, w.mask].iter().any(|v| !(*v >= 0.0)) {
            return Err(AvatarError::Config(format!("loss weights must be >= 0: {w:?}")));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(AvatarError::Config(format!("lr {} and weight decay {} must be >= 0", self.lr, self.weight_decay)));
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: usize) -> f32 {
        if iteration < self.warmup_steps {
            self.lr * (iteration + 1) as f32 / self.warmup_steps as f32
        } else {
            self.lr
        }
    }
}

/// Ground truth and precomputed pose data for one frame.
#[derive(Clone, Debug)]
pub struct Frame {
    pub pose: Pose,
    pub world: WorldTransform,
    /// `[1, 6, T, T]`
    pub pose_maps: Tensor,
    /// Per camera: `[3, H, W]` image and `[1, H, W]` mask.
    pub targets: Vec<(Tensor, Tensor)>,
}

impl Frame {
    pub fn new(template: &Template, anchors: &AnchorMap, pose: Pose, targets: Vec<(Tensor, Tensor)>) -> Result<Self> {
        let world = WorldTransform::new(template, anchors, &pose)?;
        let pose_maps = PoseMaps::compute(template, anchors, &pose)?.to_tensor();
        Ok(Self { pose, world, pose_maps, targets })
    }
}

/// Everything a fit of one identity reads.
#[derive(Clone, Debug)]
pub struct FitData {
    pub template: Template,
    pub anchors: AnchorMap,
    pub cameras: Vec<Camera>,
    pub frames: Vec<Frame>,
}

fn hwc_to_chw(width: usize, height: usize, hwc: &[f32]) -> Result<Tensor> {
    let hw = width * height;
    let mut d = vec![0.0; 3 * hw];
    for p in 0..hw {
        for c in 0..3 {
            d[c * hw + p] = hwc[p * 3 + c];
        }
    }
    Ok(Tensor::new([3, height, width], d)?)
}

impl FitData {
    /// Frames of identity `index` from a generated dataset directory.
    pub fn load(dir: &Path, index: usize) -> Result<Self> {
        let manifest = Manifest::load(dir)?;
        let entry = manifest
            .identities
            .iter()
            .find(|e| e.index == index)
            .ok_or_else(|| AvatarError::Data(format!("no identity {index} in {}", dir.display())))?;
        let template = Template::build(&manifest.template)?;
        let anchors = AnchorMap::build(&template, manifest.uv_resolution)?;
        let cameras = load_cameras(&dir.join(&manifest.cameras))?;
        let mut frames = Vec::with_capacity(entry.frames.len());
        for f in &entry.frames {
            let pose = load_pose(&dir.join(&f.pose))?;
            let mut targets = Vec::with_capacity(cameras.len());
            for (img, mask) in f.images.iter().zip(&f.masks) {
                let (w, h, rgb) = load_rgb_png(&dir.join(img))?;
                let (mw, mh, m) = load_gray_png(&dir.join(mask))?;
                if (w, h) != (mw, mh) {
                    return Err(AvatarError::Data(format!("{img} is {w}x{h} but {mask} is {mw}x{mh}")));
                }
                targets.push((hwc_to_chw(w, h, &rgb)?, Tensor::new([1, h, w], m)?));
            }
            frames.push(Frame::new(&template, &anchors, pose, targets)?);
        }
        Ok(Self { template, anchors, cameras, frames })
    }
}

/// Per-iteration loss values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub rows: Vec<(usize, LossTerms)>,
}

impl LossLog {
    pub const HEADER: &'static str = "iteration,total,l1,ssim,perc,mask";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for (i, t) in &self.rows {
            let _ = writeln!(s, "{i},{},{},{},{},{}", t.total, t.l1, t.ssim, t.perc, t.mask);
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(io_err(path))
    }

    pub fn totals(&self) -> Vec<f32> {
        self.rows.iter().map(|(_, t)| t.total).collect()
    }
}

fn record_tensors(record: &WeightRecord) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(2 * record.layers.len());
    for l in &record.layers {
        let s = l.shape;
        out.push(Tensor::new([s.c_out, s.c_in, s.k_h, s.k_w], l.kernel.clone())?);
        out.push(Tensor::new([s.c_out], l.bias.clone())?);
    }
    Ok(out)
}

fn tensors_record(template: &WeightRecord, tensors: &[Tensor]) -> Result<WeightRecord> {
    let layers = template
        .layers
        .iter()
        .zip(tensors.chunks(2))
        .map(|(l, kb)| Layer { shape: l.shape, kernel: kb[0].data().to_vec(), bias: kb[1].data().to_vec() })
        .collect();
    Ok(WeightRecord::new(layers)?)
}

/// One differentiable step's loss and parameter gradients.
fn step_graph(
    config: &FitConfig,
    params: &[Tensor],
    frame: &Frame,
    camera: &Camera,
    target: &(Tensor, Tensor),
    loss: &LossWeights,
    proxy: &PerceptualProxy,
    raster: &RasterConfig,
) -> Result<(LossTerms, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars: Vec<_> = params.chunks(2).map(|kb| (g.param(kb[0].clone()), g.param(kb[1].clone()))).collect();
    let x = g.input(frame.pose_maps.clone());
    let raw = unet_forward(&mut g, &config.network, &vars, x)?;
    let rows = select_texels(&mut g, raw, &frame.world.texels)?;
    let dec = decode_heads(&mut g, rows)?;
    let (p, q) = frame.world.apply(&mut g, dec.offsets, dec.quats)?;
    let op = Arc::new(RasterOp { camera: camera.clone(), config: raster.clone() });
    let img = g.custom(op, &[p, dec.scales, q, dec.opacity, dec.sh])?;
    let rgb = g.slice(img, 0, 0, 3)?;
    let opacity = g.slice(img, 0, 3, 4)?;
    let gt = g.input(target.0.clone());
    let mask = g.input(target.1.clone());
    let l = training_loss(&mut g, rgb, opacity, gt, mask, loss, proxy)?;
    let terms = l.terms(&g);
    if !terms.is_finite() {
        return Ok((terms, Vec::new()));
    }
    let mut grads = g.backward(l.total)?;
    let out = vars.iter().flat_map(|&(k, b)| [k, b]).map(|v| grads.take(v)).collect();
    Ok((terms, out))
}

/// Fit a network starting from `init`. Returns the final weights and the
/// per-iteration loss log.
pub fn fit_identity(data: &FitData, init: &WeightRecord, config: &FitConfig) -> Result<(WeightRecord, LossLog)> {
    fit_identity_with(data, init, config, |_, _| {})
}

/// [`fit_identity`] with a callback after every iteration.
pub fn fit_identity_with(
    data: &FitData,
    init: &WeightRecord,
    config: &FitConfig,
    mut progress: impl FnMut(usize, &LossTerms),
) -> Result<(WeightRecord, LossLog)> {
    config.validate()?;
    check_record(&config.network, init)?;
    if data.frames.is_empty() || data.cameras.is_empty() {
        return Err(AvatarError::Data("no frames or cameras to fit".into()));
    }
    if data.anchors.resolution != config.network.resolution {
        return Err(AvatarError::Config(format!(
            "dataset UV resolution {} differs from network resolution {}",
            data.anchors.resolution, config.network.resolution
        )));
    }
    let mut params = record_tensors(init)?;
    let mut opt = AdamW::new(
        AdamWConfig { lr: config.lr, weight_decay: config.weight_decay, ..AdamWConfig::default() },
        &params,
    );
    let proxy = PerceptualProxy::default();
    let raster = RasterConfig::default();
    let warm = LossWeights { perceptual: 0.0, ..config.loss.clone() };
    let mut rng = stream_rng(config.seed, SAMPLE_STREAM);
    let mut log = LossLog::default();
    for it in 0..config.iterations {
        let f = rng.random_range(0..data.frames.len());
        let c = rng.random_range(0..data.cameras.len());
        let frame = &data.frames[f];
        let weights = if it < config.warmup_steps { &warm } else { &config.loss };
        let step = step_graph(config, &params, frame, &data.cameras[c], &frame.targets[c], weights, &proxy, &raster);
        let (terms, grads) = match step {
            Ok((t, _)) if !t.is_finite() => {
                let detail = format!("total {}, l1 {}, ssim {}, perc {}, mask {}", t.total, t.l1, t.ssim, t.perc, t.mask);
                return Err(AvatarError::NonFiniteLoss { iteration: it, detail });
            }
            Err(AvatarError::Tensor(e @ TensorError::NonFinite { .. })) => {
                return Err(AvatarError::NonFiniteLoss { iteration: it, detail: e.to_string() });
            }
            other => other?,
        };
        opt.set_lr(config.lr_at(it));
        opt.step(&mut params, &grads)?;
        log.rows.push((it, terms));
        progress(it, &terms);
    }
    Ok((tensors_record(init, &params)?, log))
}

/// Decoded Gaussians of the valid texels for one frame.
pub fn predict(network: &UNetConfig, record: &WeightRecord, frame: &Frame) -> Result<DecodedMap> {
    let mut g = Graph::new();
    let vars = bind(&mut g, network, record, false)?;
    let x = g.input(frame.pose_maps.clone());
    let raw = unet_forward(&mut g, network, &vars, x)?;
    let rows = select_texels(&mut g, raw, &frame.world.texels)?;
    decode_rows(g.value(rows))
}

pub fn render(network: &UNetConfig, record: &WeightRecord, frame: &Frame, camera: &Camera) -> Result<RenderOutput> {
    let decoded = predict(network, record, frame)?;
    let set = frame.world.to_world(&decoded)?;
    Ok(rasterize_params(&set.params(), camera, &RasterConfig::default())?)
}

/// Mean Euclidean norm of the predicted canonical offsets.
pub fn mean_offset_norm(map: &DecodedMap) -> f64 {
    let n = map.len().max(1) as f64;
    map.offsets.chunks(3).map(|d| d.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_ramps_linearly() {
        let c = FitConfig { lr: 1.0, warmup_steps: 4, ..FitConfig::default() };
        assert_eq!(c.lr_at(0), 0.25);
        assert_eq!(c.lr_at(3), 1.0);
        assert_eq!(c.lr_at(10), 1.0);
        assert_eq!(FitConfig { warmup_steps: 0, ..c }.lr_at(0), 1.0);
    }

    #[test]
    fn negative_weights_rejected() {
        let mut c = FitConfig::default();
        c.loss.mask = -1.0;
        assert!(c.validate().is_err());
    }
}
