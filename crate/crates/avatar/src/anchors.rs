use crate::error::{AvatarError, Result};
use crate::template::Template;

/// Tolerance on barycentric coordinates when testing containment.
const INSIDE_TOL: f64 = 1e-12;

/// Per-texel triangle and barycentric coordinates in the template's UV
/// space. Texel `(i, j)` (row `i`, column `j`) has center
/// `((j + 0.5)/T, (i + 0.5)/T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorMap {
    pub resolution: usize,
    pub triangle: Vec<usize>,
    pub bary: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

pub fn texel_center(resolution: usize, texel: usize) -> [f64; 2] {
    let (i, j) = (texel / resolution, texel % resolution);
    [(j as f64 + 0.5) / resolution as f64, (i as f64 + 0.5) / resolution as f64]
}

/// Barycentric coordinates of `p` in the triangle `(a, b, c)`, or `None`
/// for a degenerate triangle.
pub fn barycentric(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<[f64; 3]> {
    let v0 = [b[0] - a[0], b[1] - a[1]];
    let v1 = [c[0] - a[0], c[1] - a[1]];
    let v2 = [p[0] - a[0], p[1] - a[1]];
    let den = v0[0] * v1[1] - v1[0] * v0[1];
    if den.abs() < 1e-300 {
        return None;
    }
    let lb = (v2[0] * v1[1] - v1[0] * v2[1]) / den;
    let lc = (v0[0] * v2[1] - v2[0] * v0[1]) / den;
    Some([1.0 - lb - lc, lb, lc])
}

impl AnchorMap {
    pub fn build(template: &Template, resolution: usize) -> Result<Self> {
        if resolution < 4 {
            return Err(AvatarError::Config(format!("UV resolution {resolution} is below 4")));
        }
        let n = resolution * resolution;
        let mut map = Self { resolution, triangle: vec![0; n], bary: vec![[0.0; 3]; n], valid: vec![false; n] };
        let boxes: Vec<[f64; 4]> = template
            .triangles
            .iter()
            .map(|t| {
                let us = t.map(|v| template.uvs[v][0]);
                let vs = t.map(|v| template.uvs[v][1]);
                [
                    us.iter().cloned().fold(f64::INFINITY, f64::min),
                    us.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    vs.iter().cloned().fold(f64::INFINITY, f64::min),
                    vs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                ]
            })
            .collect();
        for texel in 0..n {
            let p = texel_center(resolution, texel);
            for (ti, t) in template.triangles.iter().enumerate() {
                let bb = boxes[ti];
                if p[0] < bb[0] - 1e-12 || p[0] > bb[1] + 1e-12 || p[1] < bb[2] - 1e-12 || p[1] > bb[3] + 1e-12 {
                    continue;
                }
                let [a, b, c] = t.map(|v| template.uvs[v]);
                if let Some(w) = barycentric(p, a, b, c) {
                    if w.iter().all(|&x| x >= -INSIDE_TOL) {
                        let w = w.map(|x| x.max(0.0));
                        let s: f64 = w.iter().sum();
                        map.triangle[texel] = ti;
                        map.bary[texel] = w.map(|x| x / s);
                        map.valid[texel] = true;
                        break;
                    }
                }
            }
        }
        Ok(map)
    }

    pub fn texel_count(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.texel_count()).filter(|&t| self.valid[t]).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Barycentric interpolation of per-vertex values at a valid texel.
    pub fn interpolate<T>(&self, template: &Template, texel: usize, values: &[T]) -> T
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    {
        let tri = template.triangles[self.triangle[texel]];
        let w = self.bary[texel];
        values[tri[0]] * w[0] + values[tri[1]] * w[1] + values[tri[2]] * w[2]
    }

    /// Barycentric blend of the three corner skinning weight rows.
    pub fn skin(&self, template: &Template, texel: usize) -> Vec<f64> {
        let tri = template.triangles[self.triangle[texel]];
        let w = self.bary[texel];
        let nj = template.joint_count();
        (0..nj).map(|j| (0..3).map(|k| w[k] * template.skin(tri[k])[j]).sum()).collect()
    }
}
