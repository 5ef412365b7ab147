//! Canonical texel Gaussians to posed world space.

use std::sync::Arc;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use wsd_splat::GaussianSet;
use wsd_tensor::{Graph, Tensor, Var};

use crate::anchors::AnchorMap;
use crate::error::Result;
use crate::heads::DecodedMap;
use crate::template::{JointTransforms, Pose, Template};

/// Per-valid-texel skinning for one pose.
///
/// A texel Gaussian with canonical offset `d` and local rotation `q` lands
/// at `x + (A − I)x + b` with `x = Σ a·v̄ + d`, where `A`, `b` blend the joint
/// transforms by the barycentric average of the corner skin weights. Its
/// rotation becomes `q_blend ⊗ q`, `q_blend` being the normalized,
/// sign-aligned weighted sum of joint quaternions.
#[derive(Clone, Debug)]
pub struct WorldTransform {
    pub texels: Arc<Vec<usize>>,
    /// `[N, 3]` canonical surface points.
    pub base: Tensor,
    /// `[N, 3, 3]` blended `A − I`.
    pub delta: Tensor,
    /// `[N, 3]` blended translation.
    pub offset: Tensor,
    /// `[N, 4, 4]` left multiplication by `q_blend`.
    pub quat_left: Tensor,
}

fn quat_left_matrix(q: &UnitQuaternion<f64>) -> [f64; 16] {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    [w, -x, -y, -z, x, w, -z, y, y, z, w, -x, z, -y, x, w]
}

impl WorldTransform {
    pub fn new(template: &Template, anchors: &AnchorMap, pose: &Pose) -> Result<Self> {
        let joints = JointTransforms::new(template, pose)?;
        let quats: Vec<UnitQuaternion<f64>> = joints.rotations.iter().map(UnitQuaternion::from_matrix).collect();
        let texels = anchors.valid_indices();
        let n = texels.len();
        let mut base = Vec::with_capacity(3 * n);
        let mut delta = Vec::with_capacity(9 * n);
        let mut offset = Vec::with_capacity(3 * n);
        let mut quat_left = Vec::with_capacity(16 * n);
        for &t in &texels {
            let x: Vector3<f64> = anchors.interpolate(template, t, &template.vertices);
            base.extend(x.iter().map(|&v| v as f32));
            let w = anchors.skin(template, t);
            let mut a = Matrix3::zeros();
            let mut b = Vector3::zeros();
            for (j, &wj) in w.iter().enumerate() {
                if wj != 0.0 {
                    a += wj * (joints.rotations[j] - Matrix3::identity());
                    b += wj * joints.translations[j];
                }
            }
            for r in 0..3 {
                for c in 0..3 {
                    delta.push(a[(r, c)] as f32);
                }
            }
            offset.extend(b.iter().map(|&v| v as f32));
            let main = (0..w.len()).max_by(|&i, &j| w[i].total_cmp(&w[j]).then(j.cmp(&i))).unwrap_or(0);
            let reference = quats[main].coords;
            let mut blend = nalgebra::Vector4::zeros();
            for (j, &wj) in w.iter().enumerate() {
                let c = quats[j].coords;
                blend += if c.dot(&reference) < 0.0 { -wj * c } else { wj * c };
            }
            let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(blend));
            quat_left.extend(quat_left_matrix(&q).iter().map(|&v| v as f32));
        }
        Ok(Self {
            texels: Arc::new(texels),
            base: Tensor::new([n, 3], base)?,
            delta: Tensor::new([n, 3, 3], delta)?,
            offset: Tensor::new([n, 3], offset)?,
            quat_left: Tensor::new([n, 4, 4], quat_left)?,
        })
    }

    pub fn len(&self) -> usize {
        self.texels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texels.is_empty()
    }

    /// World positions `[N, 3]` and rotations `[N, 4]` from canonical
    /// offsets `[N, 3]` and local rotations `[N, 4]`.
    pub fn apply(&self, g: &mut Graph, offsets: Var, quats: Var) -> Result<(Var, Var)> {
        let n = self.len();
        let base = g.input(self.base.clone());
        let x = g.add(base, offsets)?;
        let x3 = g.reshape(x, &[n, 3, 1])?;
        let delta = g.input(self.delta.clone());
        let dx = g.matmul(delta, x3)?;
        let dx = g.reshape(dx, &[n, 3])?;
        let p = g.add(x, dx)?;
        let b = g.input(self.offset.clone());
        let p = g.add(p, b)?;
        let q4 = g.reshape(quats, &[n, 4, 1])?;
        let ql = g.input(self.quat_left.clone());
        let q = g.matmul(ql, q4)?;
        let q = g.reshape(q, &[n, 4])?;
        Ok((p, q))
    }

    /// Non-differentiable evaluation for rendering.
    pub fn to_world(&self, map: &DecodedMap) -> Result<GaussianSet> {
        let n = self.len();
        let mut g = Graph::new();
        let d = g.input(Tensor::new([n, 3], map.offsets.clone())?);
        let q = g.input(Tensor::new([n, 4], map.quats.clone())?);
        let (p, q) = self.apply(&mut g, d, q)?;
        Ok(GaussianSet {
            positions: g.value(p).data().to_vec(),
            scales: map.scales.clone(),
            quats: g.value(q).data().to_vec(),
            opacity: map.opacity.clone(),
            sh: map.sh.clone(),
        })
    }
}
