use nalgebra::Vector3;
use wsd_tensor::Tensor;

use crate::anchors::AnchorMap;
use crate::error::Result;
use crate::template::{lbs, Pose, Template};

/// Posed surface positions and normals per texel; zero on invalid texels.
#[derive(Clone, Debug)]
pub struct PoseMaps {
    pub resolution: usize,
    pub positions: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
}

impl PoseMaps {
    pub fn compute(template: &Template, anchors: &AnchorMap, pose: &Pose) -> Result<Self> {
        let posed = lbs(template, pose)?;
        let n = anchors.texel_count();
        let mut positions = vec![Vector3::zeros(); n];
        let mut normals = vec![Vector3::zeros(); n];
        for t in 0..n {
            if !anchors.valid[t] {
                continue;
            }
            positions[t] = anchors.interpolate(template, t, &posed);
            let [a, b, c] = template.triangles[anchors.triangle[t]].map(|v| posed[v]);
            normals[t] = (b - a).cross(&(c - a)).normalize();
        }
        Ok(Self { resolution: anchors.resolution, positions, normals })
    }

    /// `[1, 6, T, T]` network input: normals then positions.
    pub fn to_tensor(&self) -> Tensor {
        let n = self.resolution * self.resolution;
        let mut data = vec![0.0f32; 6 * n];
        for t in 0..n {
            for k in 0..3 {
                data[k * n + t] = self.normals[t][k] as f32;
                data[(3 + k) * n + t] = self.positions[t][k] as f32;
            }
        }
        Tensor::new([1, 6, self.resolution, self.resolution], data).expect("sizes agree")
    }
}
