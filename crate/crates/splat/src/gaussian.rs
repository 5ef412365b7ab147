use crate::error::{Result, SplatError};
use crate::sh::SH_LEN;

pub type Mat3 = [[f64; 3]; 3];

/// Number of scalar parameters per Gaussian.
pub const GAUSSIAN_PARAMS: usize = 3 + 3 + 4 + 1 + SH_LEN;

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: [f32; 3],
    pub scale: [f32; 3],
    /// `(w, x, y, z)`; normalized before use.
    pub quat: [f32; 4],
    pub opacity: f32,
    pub sh: [f32; SH_LEN],
}

impl Gaussian {
    pub fn isotropic(position: [f32; 3], scale: f32, opacity: f32, sh: [f32; SH_LEN]) -> Self {
        Self { position, scale: [scale; 3], quat: [1.0, 0.0, 0.0, 0.0], opacity, sh }
    }
}

/// Unit quaternion and the norm it was divided by.
pub fn normalize_quat(q: [f32; 4]) -> Option<([f64; 4], f64)> {
    let q = q.map(|v| v as f64);
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n <= 1e-12 || !n.is_finite() {
        return None;
    }
    Some((q.map(|v| v / n), n))
}

pub fn quat_to_rot(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Pull a gradient on `R(q)` back to the (unit) quaternion.
pub fn quat_to_rot_vjp(q: [f64; 4], g: &Mat3) -> [f64; 4] {
    let [w, x, y, z] = q;
    [
        2.0 * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]),
        2.0 * (y * g[0][1] + z * g[0][2] + y * g[1][0] - 2.0 * x * g[1][1] - w * g[1][2] + z * g[2][0]
            + w * g[2][1]
            - 2.0 * x * g[2][2]),
        2.0 * (-2.0 * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0]
            + z * g[2][1]
            - 2.0 * y * g[2][2]),
        2.0 * (-2.0 * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - 2.0 * z * g[1][1]
            + y * g[1][2]
            + x * g[2][0]
            + y * g[2][1]),
    ]
}

/// `Σ = R(q)·diag(s²)·R(q)ᵀ`.
pub fn build_covariance(s: [f32; 3], q: [f32; 4]) -> Result<Mat3> {
    let (qn, _) = normalize_quat(q).ok_or(SplatError::ZeroQuaternion { index: 0 })?;
    Ok(covariance_from_unit(s.map(|v| v as f64), qn))
}

pub(crate) fn covariance_from_unit(s: [f64; 3], q: [f64; 4]) -> Mat3 {
    let r = quat_to_rot(q);
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| r[i][k] * s[k] * s[k] * r[j][k]).sum();
        }
    }
    m
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[j][i];
        }
    }
    m
}

pub fn mat_vec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}
