//! Render-based distances between fitted avatars.

use serde::Serialize;
use sha2::{Digest, Sha256};
use wsd_avatar::synth::{pose_to_json, ring_cameras};
use wsd_avatar::{render, sample_pose_sequence, AnchorMap, Frame, PerceptualProxy, Pose, Template, TemplateConfig, UNetConfig};
use wsd_splat::Camera;
use wsd_tensor::{Graph, Tensor};
use wsd_weights::WeightRecord;

use crate::error::{MetricsError, Result};
use crate::sets::Metric;

pub const PSNR_CAP_DB: f64 = 100.0;
const MSE_FLOOR: f64 = 1e-10;

/// `10·log10(1/MSE)` with the MSE floored at `1e-10`.
pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(MetricsError::Shape(format!("images of {} and {} values", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(10.0 * (1.0 / mse.max(MSE_FLOOR)).log10())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeConfig {
    pub poses: usize,
    pub cameras: usize,
    pub resolution: usize,
    pub seed: u64,
    pub network: UNetConfig,
    pub template: TemplateConfig,
}

impl ProbeConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            poses: 4,
            cameras: 4,
            resolution: 64,
            seed,
            network: UNetConfig::desk(),
            template: TemplateConfig::default(),
        }
    }
}

/// Fixed `(pose, camera)` pairs shared by every avatar in a comparison.
#[derive(Clone, Debug)]
pub struct ProbeSet {
    pub config: ProbeConfig,
    pub frames: Vec<Frame>,
    pub cameras: Vec<Camera>,
    proxy: PerceptualProxy,
}

/// RGB renders `[3, H, W]` of one avatar under every probe, pose-major.
#[derive(Clone, Debug)]
pub struct ProbeRenders {
    pub images: Vec<Tensor>,
}

impl ProbeSet {
    pub fn new(config: ProbeConfig) -> Result<Self> {
        if config.poses == 0 || config.cameras == 0 {
            return Err(MetricsError::Empty("probe set needs at least one pose and one camera".into()));
        }
        let template = Template::build(&config.template)?;
        let anchors = AnchorMap::build(&template, config.network.resolution)?;
        let poses = sample_pose_sequence(config.seed, config.poses, template.joint_count());
        let frames = poses
            .into_iter()
            .map(|p| Frame::new(&template, &anchors, p, Vec::new()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let cameras = ring_cameras(config.cameras, config.resolution, &template)?;
        Ok(Self { config, frames, cameras, proxy: PerceptualProxy::default() })
    }

    pub fn len(&self) -> usize {
        self.frames.len() * self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.frames.iter().map(|f| &f.pose)
    }

    /// SHA-256 over the probe configuration, poses, and cameras.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("plain data"));
        for p in self.poses() {
            h.update(pose_to_json(p).as_bytes());
        }
        h.update(serde_json::to_vec(&self.cameras).expect("plain data"));
        hex::encode(h.finalize())
    }

    pub fn render(&self, record: &WeightRecord) -> Result<ProbeRenders> {
        let mut images = Vec::with_capacity(self.len());
        for (pi, frame) in self.frames.iter().enumerate() {
            for (ci, cam) in self.cameras.iter().enumerate() {
                let probe = pi * self.cameras.len() + ci;
                let out = render(&self.config.network, record, frame, cam)
                    .map_err(|source| MetricsError::Render { probe, pose: pi, camera: ci, source })?;
                let chw = out.to_chw();
                let rgb = chw.data()[..3 * out.width * out.height].to_vec();
                if let Some(i) = rgb.iter().position(|v| !v.is_finite()) {
                    return Err(MetricsError::Render {
                        probe,
                        pose: pi,
                        camera: ci,
                        source: wsd_avatar::AvatarError::Config(format!("non-finite pixel value at {i}")),
                    });
                }
                images.push(Tensor::new([3, out.height, out.width], rgb)?);
            }
        }
        Ok(ProbeRenders { images })
    }

    /// Distance between two already-rendered avatars.
    pub fn distance(&self, a: &ProbeRenders, b: &ProbeRenders, metric: Metric) -> Result<f64> {
        if a.images.len() != b.images.len() || a.images.is_empty() {
            return Err(MetricsError::Shape(format!("{} vs {} probe renders", a.images.len(), b.images.len())));
        }
        let mut total = 0.0;
        for (x, y) in a.images.iter().zip(&b.images) {
            total += match metric {
                Metric::NegPsnr => -psnr(x.data(), y.data())?,
                Metric::PerceptualProxy => {
                    let mut g = Graph::new();
                    let (xv, yv) = (g.input(x.clone()), g.input(y.clone()));
                    let d = self.proxy.distance(&mut g, xv, yv)?;
                    g.value(d).item() as f64
                }
            };
        }
        Ok(total / a.images.len() as f64)
    }
}

/// Render both records under every probe and compare.
pub fn avatar_distance(a: &WeightRecord, b: &WeightRecord, probes: &ProbeSet, metric: Metric) -> Result<f64> {
    probes.distance(&probes.render(a)?, &probes.render(b)?, metric)
}
