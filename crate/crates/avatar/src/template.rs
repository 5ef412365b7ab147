//! Procedural tube template with a chain skeleton and linear blend skinning.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{AvatarError, Result};

pub const BONE_LENGTH: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateConfig {
    pub joint_count: usize,
    pub radial_segments: usize,
    pub height_segments: usize,
    pub radius: f64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self { joint_count: 4, radial_segments: 16, height_segments: 16, radius: 0.2 }
    }
}

/// Open tube along +Y made of `joint_count` bones of length
/// [`BONE_LENGTH`]. Joint `j` sits at `(0, j·BONE_LENGTH, 0)` and drives
/// bone `j`; the parent of joint `j` is `j − 1`.
///
/// Vertices are laid out ring by ring from the bottom, `radial + 1` per ring
/// (the seam column is duplicated so the cylindrical unwrap stays
/// injective). No end caps.
#[derive(Clone, Debug)]
pub struct Template {
    pub config: TemplateConfig,
    pub vertices: Vec<Vector3<f64>>,
    pub uvs: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub joints: Vec<Vector3<f64>>,
    pub parents: Vec<Option<usize>>,
    /// Row-major `V × J` skinning weights.
    pub weights: Vec<f64>,
}

impl Template {
    pub fn build(config: &TemplateConfig) -> Result<Self> {
        let TemplateConfig { joint_count: nj, radial_segments: nr, height_segments: nh, radius } = *config;
        if nj < 2 || nr < 3 || nh < 1 || !(radius > 0.0 && radius.is_finite()) {
            return Err(AvatarError::InvalidTemplate(format!(
                "need joint_count >= 2, radial_segments >= 3, height_segments >= 1 and a positive radius, got {config:?}"
            )));
        }
        let height = nj as f64 * BONE_LENGTH;
        let mut vertices = Vec::new();
        let mut uvs = Vec::new();
        let mut weights = Vec::new();
        for r in 0..=nh {
            let v = r as f64 / nh as f64;
            let y = v * height;
            let w = bone_weights(y, nj);
            for k in 0..=nr {
                let u = k as f64 / nr as f64;
                let theta = u * std::f64::consts::TAU;
                vertices.push(Vector3::new(radius * theta.cos(), y, radius * theta.sin()));
                uvs.push([u, v]);
                weights.extend_from_slice(&w);
            }
        }
        let idx = |r: usize, k: usize| r * (nr + 1) + k;
        let mut triangles = Vec::new();
        for r in 0..nh {
            for k in 0..nr {
                // wound so that (b − a) × (c − a) points outward
                triangles.push([idx(r, k), idx(r + 1, k), idx(r, k + 1)]);
                triangles.push([idx(r, k + 1), idx(r + 1, k), idx(r + 1, k + 1)]);
            }
        }
        let joints = (0..nj).map(|j| Vector3::new(0.0, j as f64 * BONE_LENGTH, 0.0)).collect();
        let parents = (0..nj).map(|j| j.checked_sub(1)).collect();
        Ok(Self { config: config.clone(), vertices, uvs, triangles, joints, parents, weights })
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn height(&self) -> f64 {
        self.joint_count() as f64 * BONE_LENGTH
    }

    pub fn skin(&self, v: usize) -> &[f64] {
        let j = self.joint_count();
        &self.weights[v * j..(v + 1) * j]
    }
}

/// Linear blend between the two bones whose centers bracket `y`.
fn bone_weights(y: f64, nj: usize) -> Vec<f64> {
    let mut w = vec![0.0; nj];
    let center = |b: usize| (b as f64 + 0.5) * BONE_LENGTH;
    if y <= center(0) {
        w[0] = 1.0;
    } else if y >= center(nj - 1) {
        w[nj - 1] = 1.0;
    } else {
        let b = (((y - center(0)) / BONE_LENGTH).floor() as usize).min(nj - 2);
        let t = (y - center(b)) / BONE_LENGTH;
        w[b] = 1.0 - t;
        w[b + 1] = t;
    }
    w
}

/// Per-joint axis-angle rotations (radians) and a root translation.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub rotations: Vec<[f64; 3]>,
    pub root_translation: [f64; 3],
}

impl Pose {
    pub fn identity(joint_count: usize) -> Self {
        Self { rotations: vec![[0.0; 3]; joint_count], root_translation: [0.0; 3] }
    }

    pub fn from_rotations(rotations: Vec<[f64; 3]>) -> Self {
        Self { rotations, root_translation: [0.0; 3] }
    }

    pub fn validate(&self, joint_count: usize) -> Result<()> {
        if self.rotations.len() != joint_count {
            return Err(AvatarError::InvalidPose(format!("{} rotations for {joint_count} joints", self.rotations.len())));
        }
        for (j, r) in self.rotations.iter().enumerate() {
            let a = angle(r);
            if !(a <= std::f64::consts::PI + 1e-9) {
                return Err(AvatarError::InvalidPose(format!("joint {j} rotates by {a} rad")));
            }
        }
        if self.root_translation.iter().any(|v| !v.is_finite()) {
            return Err(AvatarError::InvalidPose("non-finite root translation".into()));
        }
        Ok(())
    }

    /// Pose with a global rotation `r` applied at the root.
    pub fn rotated_globally(&self, r: &Matrix3<f64>) -> Self {
        let root = UnitQuaternion::from_matrix(r) * UnitQuaternion::from_matrix(&axis_angle_matrix(self.rotations[0]));
        let mut rotations = self.rotations.clone();
        rotations[0] = quat_to_axis_angle(&root);
        let t = r * Vector3::from(self.root_translation);
        Self { rotations, root_translation: [t.x, t.y, t.z] }
    }

    /// Mean absolute rotation angle of the non-root joints, divided by π.
    pub fn bend(&self) -> f64 {
        let n = self.rotations.len().saturating_sub(1).max(1) as f64;
        self.rotations.iter().skip(1).map(angle).sum::<f64>() / n / std::f64::consts::PI
    }
}

fn angle(r: &[f64; 3]) -> f64 {
    (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt()
}

/// Rodrigues' formula; a zero vector gives the exact identity.
pub fn axis_angle_matrix(r: [f64; 3]) -> Matrix3<f64> {
    let theta = angle(&r);
    if theta == 0.0 {
        return Matrix3::identity();
    }
    let k = Vector3::new(r[0], r[1], r[2]) / theta;
    let kx = k.cross_matrix();
    Matrix3::identity() + kx * theta.sin() + kx * kx * (1.0 - theta.cos())
}

/// Rotation vector with angle in `[0, π]`.
pub fn quat_to_axis_angle(q: &UnitQuaternion<f64>) -> [f64; 3] {
    let (w, v) = (q.w, q.imag());
    let (w, v) = if w < 0.0 { (-w, -v) } else { (w, v) };
    let s = v.norm();
    if s == 0.0 {
        return [0.0; 3];
    }
    let theta = 2.0 * s.atan2(w);
    let a = v * (theta / s);
    [a.x, a.y, a.z]
}

/// World transform `x ↦ R x + t` of each joint.
#[derive(Clone, Debug)]
pub struct JointTransforms {
    pub rotations: Vec<Matrix3<f64>>,
    pub translations: Vec<Vector3<f64>>,
}

impl JointTransforms {
    pub fn new(template: &Template, pose: &Pose) -> Result<Self> {
        pose.validate(template.joint_count())?;
        let nj = template.joint_count();
        let mut rotations: Vec<Matrix3<f64>> = Vec::with_capacity(nj);
        let mut translations: Vec<Vector3<f64>> = Vec::with_capacity(nj);
        for j in 0..nj {
            // local: rotate about the joint origin o, x ↦ R(x − o) + o
            let r = axis_angle_matrix(pose.rotations[j]);
            let o = template.joints[j];
            let t_local = o - r * o;
            let (rg, tg) = match template.parents[j] {
                Some(p) => (rotations[p] * r, rotations[p] * t_local + translations[p]),
                None => (r, t_local + Vector3::from(pose.root_translation)),
            };
            rotations.push(rg);
            translations.push(tg);
        }
        Ok(Self { rotations, translations })
    }

    /// `x + Σ_j w_j (G_j x − x)`; equal to `Σ_j w_j G_j x` for weights summing
    /// to one, and exactly `x` when every `G_j` is the identity.
    pub fn blend(&self, weights: &[f64], x: &Vector3<f64>) -> Vector3<f64> {
        let mut delta = Vector3::zeros();
        for (j, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                delta += w * (self.rotations[j] * x + self.translations[j] - x);
            }
        }
        x + delta
    }
}

/// Linear blend skinning of every template vertex.
pub fn lbs(template: &Template, pose: &Pose) -> Result<Vec<Vector3<f64>>> {
    let g = JointTransforms::new(template, pose)?;
    Ok(template.vertices.iter().enumerate().map(|(v, x)| g.blend(template.skin(v), x)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_template_counts() {
        let t = Template::build(&TemplateConfig { joint_count: 2, radial_segments: 4, height_segments: 2, radius: 0.2 }).unwrap();
        assert_eq!(t.vertex_count(), 5 * 3);
        assert_eq!(t.triangles.len(), 2 * 4 * 2);
        for v in 0..t.vertex_count() {
            assert!((t.skin(v).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_config_errors() {
        assert!(Template::build(&TemplateConfig { joint_count: 1, ..Default::default() }).is_err());
        assert!(Template::build(&TemplateConfig { radius: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn rodrigues_matches_quaternion() {
        let r = [0.3, -1.1, 0.4];
        let m = axis_angle_matrix(r);
        let q = UnitQuaternion::from_scaled_axis(Vector3::new(r[0], r[1], r[2]));
        assert!((m - q.to_rotation_matrix().into_inner()).norm() < 1e-12);
        let back = quat_to_axis_angle(&q);
        for k in 0..3 {
            assert!((back[k] - r[k]).abs() < 1e-12);
        }
    }
}
