//! Procedural multi-identity, multi-view, multi-frame capture data with a
//! known pose-dependent surface deformation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use wsd_splat::sh::C0;
use wsd_splat::{rasterize_params, save_gray_png, Camera, RasterConfig, SH_LEN};
use wsd_tensor::{derive_seed, stream_rng};

use crate::anchors::{texel_center, AnchorMap};
use crate::error::{io_err, json_err, AvatarError, Result};
use crate::heads::DecodedMap;
use crate::template::{Pose, Template, TemplateConfig};
use crate::world::WorldTransform;

pub const ORACLE_OPACITY: f32 = 0.95;
pub const WRINKLE_AMPLITUDE_MAX: f64 = 0.03;
pub const JOINT_AMPLITUDE_MAX: f64 = std::f64::consts::FRAC_PI_3;
pub const ROOT_AMPLITUDE_MAX: f64 = std::f64::consts::PI / 12.0;
/// World units covered by the image width.
pub const VIEW_SPAN: f64 = 2.0;
pub const CAMERA_DISTANCE: f64 = 3.0;

const IDENTITY_STREAM: u64 = 0x1d;
const POSE_STREAM: u64 = 0x905e;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentitySpec {
    pub seed: u64,
    pub band_colors: Vec<[f32; 3]>,
    pub checker_frequency: u32,
    pub checker_amplitude: f32,
    pub wrinkle_amplitude: f64,
    pub wrinkle_frequency: u32,
    pub wrinkle_phase: f64,
    pub base_scale: f32,
}

pub fn make_identity(seed: u64) -> IdentitySpec {
    let mut rng = stream_rng(seed, IDENTITY_STREAM);
    let bands = rng.random_range(2..=6);
    let band_colors = (0..bands)
        .map(|_| [rng.random_range(0.1..0.95), rng.random_range(0.1..0.95), rng.random_range(0.1..0.95)])
        .collect();
    IdentitySpec {
        seed,
        band_colors,
        checker_frequency: rng.random_range(2..=6),
        checker_amplitude: rng.random_range(0.02..0.08),
        wrinkle_amplitude: rng.random_range(0.0..=WRINKLE_AMPLITUDE_MAX),
        wrinkle_frequency: rng.random_range(2..=8),
        wrinkle_phase: rng.random_range(0.0..std::f64::consts::TAU),
        base_scale: rng.random_range(0.02..0.03),
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl IdentitySpec {
    /// Soft horizontal color bands plus a faint sinusoidal checker.
    pub fn albedo(&self, u: f64, v: f64) -> [f32; 3] {
        let n = self.band_colors.len();
        let f = v * n as f64 - 0.5;
        let lo = f.floor();
        let s = smoothstep(0.3, 0.7, f - lo);
        let b0 = (lo.max(0.0) as usize).min(n - 1);
        let b1 = ((lo + 1.0).max(0.0) as usize).min(n - 1);
        let k = std::f64::consts::TAU * self.checker_frequency as f64;
        let checker = self.checker_amplitude as f64 * (k * u).sin() * (k * v).sin();
        [0, 1, 2].map(|c| {
            let base = self.band_colors[b0][c] as f64 * (1.0 - s) + self.band_colors[b1][c] as f64 * s;
            (base + checker).clamp(0.0, 1.0) as f32
        })
    }

    /// Signed normal displacement `A·sin(2πfv + φ)·bend` at UV height `v`.
    pub fn wrinkle(&self, v: f64, bend: f64) -> f64 {
        self.wrinkle_amplitude
            * (std::f64::consts::TAU * self.wrinkle_frequency as f64 * v + self.wrinkle_phase).sin()
            * bend
    }
}

/// Ground-truth canonical Gaussians on the valid texels of `anchors`.
pub fn oracle_gaussians(identity: &IdentitySpec, pose: &Pose, template: &Template, anchors: &AnchorMap) -> DecodedMap {
    let bend = pose.bend();
    let texels = anchors.valid_indices();
    let n = texels.len();
    let mut map = DecodedMap {
        offsets: Vec::with_capacity(3 * n),
        scales: vec![identity.base_scale; 3 * n],
        quats: [1.0, 0.0, 0.0, 0.0].repeat(n),
        opacity: vec![ORACLE_OPACITY; n],
        sh: vec![0.0; SH_LEN * n],
    };
    for (row, &t) in texels.iter().enumerate() {
        let [u, v] = texel_center(anchors.resolution, t);
        let [a, b, c] = template.triangles[anchors.triangle[t]].map(|i| template.vertices[i]);
        let normal = (b - a).cross(&(c - a)).normalize();
        let d = identity.wrinkle(v, bend);
        map.offsets.extend(normal.iter().map(|&x| (d * x) as f32));
        let albedo = identity.albedo(u, v);
        for ch in 0..3 {
            map.sh[row * SH_LEN + ch] = ((albedo[ch] as f64 - 0.5) / C0) as f32;
        }
    }
    map
}

/// Sinusoidal angle curve about a fixed axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointCurve {
    pub axis: [f64; 3],
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
}

impl JointCurve {
    pub fn rotation(&self, t: f64) -> [f64; 3] {
        let a = self.amplitude * (std::f64::consts::TAU * t / self.period + self.phase).sin();
        self.axis.map(|x| x * a)
    }
}

/// One curve per joint: the root turns about +Y, the others bend about a
/// random horizontal axis.
pub fn random_curves(seed: u64, joint_count: usize) -> Vec<JointCurve> {
    let mut rng = stream_rng(seed, POSE_STREAM);
    (0..joint_count)
        .map(|j| {
            let (axis, max) = if j == 0 {
                ([0.0, 1.0, 0.0], ROOT_AMPLITUDE_MAX)
            } else {
                let psi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                ([psi.cos(), 0.0, psi.sin()], JOINT_AMPLITUDE_MAX)
            };
            JointCurve {
                axis,
                amplitude: rng.random_range(0.0..=max),
                period: rng.random_range(4.0..16.0),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect()
}

pub fn poses_from_curves(curves: &[JointCurve], frame_count: usize) -> Vec<Pose> {
    (0..frame_count).map(|f| Pose::from_rotations(curves.iter().map(|c| c.rotation(f as f64)).collect())).collect()
}

pub fn sample_pose_sequence(seed: u64, frame_count: usize, joint_count: usize) -> Vec<Pose> {
    poses_from_curves(&random_curves(seed, joint_count), frame_count)
}

/// `count` cameras on a horizontal circle around the template, looking at
/// its mid-height.
pub fn ring_cameras(count: usize, resolution: usize, template: &Template) -> Result<Vec<Camera>> {
    let h = template.height() / 2.0;
    (0..count)
        .map(|c| {
            let a = std::f64::consts::TAU * c as f64 / count as f64;
            let eye = [CAMERA_DISTANCE * a.sin(), h, CAMERA_DISTANCE * a.cos()];
            Ok(Camera::look_at(eye, [0.0, h, 0.0], [0.0, 1.0, 0.0], resolution as f64 / VIEW_SPAN, resolution, resolution)?)
        })
        .collect()
}

pub fn pose_to_json(pose: &Pose) -> String {
    serde_json::to_string(&pose.rotations).expect("plain numbers")
}

pub fn load_pose(path: &Path) -> Result<Pose> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let rotations: Vec<[f64; 3]> = serde_json::from_str(&text).map_err(json_err(path))?;
    Ok(Pose::from_rotations(rotations))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub identities: usize,
    pub frames: usize,
    pub cameras: usize,
    pub resolution: usize,
    pub uv_resolution: usize,
    pub seed: u64,
    pub template: TemplateConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub pose: String,
    pub images: Vec<String>,
    pub masks: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityEntry {
    pub index: usize,
    pub seed: u64,
    pub spec: IdentitySpec,
    pub frames: Vec<FrameEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub resolution: usize,
    pub uv_resolution: usize,
    pub template: TemplateConfig,
    pub cameras: String,
    pub identities: Vec<IdentityEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CAMERAS_FILE: &str = "cameras.json";

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let m: Manifest = serde_json::from_str(&text).map_err(json_err(&path))?;
        m.check(dir)?;
        Ok(m)
    }

    /// Every referenced file exists and per-frame counts agree.
    pub fn check(&self, dir: &Path) -> Result<()> {
        let cams = load_cameras(&dir.join(&self.cameras))?;
        for id in &self.identities {
            for (f, fr) in id.frames.iter().enumerate() {
                if fr.images.len() != cams.len() || fr.masks.len() != cams.len() {
                    return Err(AvatarError::Data(format!(
                        "identity {} frame {f}: {} images and {} masks for {} cameras",
                        id.index,
                        fr.images.len(),
                        fr.masks.len(),
                        cams.len()
                    )));
                }
                for rel in std::iter::once(&fr.pose).chain(&fr.images).chain(&fr.masks) {
                    if !dir.join(rel).is_file() {
                        return Err(AvatarError::Data(format!("missing file {}", dir.join(rel).display())));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn load_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Identity `i` of a dataset seeded with `seed`.
pub fn identity_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

/// Render every identity, frame and camera into `out_dir` and write the
/// manifest last.
pub fn generate_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<Manifest> {
    if config.identities == 0 || config.frames == 0 || config.cameras == 0 || config.resolution == 0 {
        return Err(AvatarError::Config(format!("dataset sizes must be positive: {config:?}")));
    }
    let template = Template::build(&config.template)?;
    let anchors = AnchorMap::build(&template, config.uv_resolution)?;
    let cameras = ring_cameras(config.cameras, config.resolution, &template)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_text(&out_dir.join(CAMERAS_FILE), &serde_json::to_string_pretty(&cameras).expect("cameras serialize"))?;
    let raster = RasterConfig::default();

    let mut identities = Vec::with_capacity(config.identities);
    for i in 0..config.identities {
        let seed = identity_seed(config.seed, i);
        let spec = make_identity(seed);
        let poses = sample_pose_sequence(derive_seed(seed, 1), config.frames, template.joint_count());
        let mut frames = Vec::with_capacity(config.frames);
        for (f, pose) in poses.iter().enumerate() {
            let rel_dir = PathBuf::from(format!("identity_{i}")).join(format!("frame_{f}"));
            let dir = out_dir.join(&rel_dir);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let pose_rel = rel_dir.join("pose.json");
            write_text(&out_dir.join(&pose_rel), &pose_to_json(pose))?;
            let world = WorldTransform::new(&template, &anchors, pose)?.to_world(&oracle_gaussians(&spec, pose, &template, &anchors))?;
            let mut images = Vec::new();
            let mut masks = Vec::new();
            for (c, cam) in cameras.iter().enumerate() {
                let out = rasterize_params(&world.params(), cam, &raster)?;
                let img_rel = rel_dir.join(format!("cam_{c}.png"));
                let mask_rel = rel_dir.join(format!("mask_{c}.png"));
                out.save_png(&out_dir.join(&img_rel))?;
                let mask: Vec<f32> = out.opacity.iter().map(|&o| if o > 0.5 { 1.0 } else { 0.0 }).collect();
                save_gray_png(&out_dir.join(&mask_rel), out.width, out.height, &mask)?;
                images.push(rel_string(&img_rel));
                masks.push(rel_string(&mask_rel));
            }
            frames.push(FrameEntry { pose: rel_string(&pose_rel), images, masks });
        }
        identities.push(IdentityEntry { index: i, seed, spec, frames });
    }
    let manifest = Manifest {
        seed: config.seed,
        resolution: config.resolution,
        uv_resolution: config.uv_resolution,
        template: config.template.clone(),
        cameras: CAMERAS_FILE.to_string(),
        identities,
    };
    write_text(&out_dir.join(MANIFEST_FILE), &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    Ok(manifest)
}

fn rel_string(p: &Path) -> String {
    p.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_deterministic_and_in_range() {
        assert_eq!(make_identity(5), make_identity(5));
        for s in 0..200 {
            let id = make_identity(s);
            assert!((0.0..=WRINKLE_AMPLITUDE_MAX).contains(&id.wrinkle_amplitude));
            assert!((2..=8).contains(&id.wrinkle_frequency));
            assert!((2..=6).contains(&id.band_colors.len()));
        }
    }

    #[test]
    fn albedo_parameters_are_distinct() {
        let mut seen: Vec<Vec<u32>> = (0..100)
            .map(|s| {
                let id = make_identity(s);
                let mut key: Vec<u32> = id.band_colors.iter().flatten().map(|c| c.to_bits()).collect();
                key.push(id.checker_frequency);
                key.push(id.checker_amplitude.to_bits());
                key
            })
            .collect();
        seen.sort();
        seen.dedup();
        assert!(seen.len() >= 95);
    }

    #[test]
    fn pose_amplitudes_are_bounded() {
        for s in 0..50 {
            for p in sample_pose_sequence(s, 20, 4) {
                for (j, r) in p.rotations.iter().enumerate() {
                    let a = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                    let max = if j == 0 { ROOT_AMPLITUDE_MAX } else { JOINT_AMPLITUDE_MAX };
                    assert!(a <= max + 1e-12);
                }
            }
        }
        assert_eq!(sample_pose_sequence(3, 5, 4), sample_pose_sequence(3, 5, 4));
    }

    #[test]
    fn zero_amplitude_curves_give_identity() {
        let mut curves = random_curves(1, 4);
        for c in &mut curves {
            c.amplitude = 0.0;
        }
        let p = &poses_from_curves(&curves, 1)[0];
        assert!(p.rotations.iter().flatten().all(|&v| v == 0.0));
    }
}
