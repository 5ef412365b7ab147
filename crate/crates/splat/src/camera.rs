use serde::{Deserialize, Serialize};

use crate::error::{Result, SplatError};
use crate::gaussian::{mat_vec, Mat3};

/// Orthographic camera. Rows of `rotation` are the camera right, down and
/// forward axes in world coordinates; `p_cam = R·p + t`.
///
/// Serialized with the rotation as 9 row-major numbers; deserialization
/// validates the frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "CameraFile", try_from = "CameraFile")]
pub struct Camera {
    pub rotation: Mat3,
    pub translation: [f64; 3],
    /// Pixels per world unit.
    pub pixel_scale: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Serialize, Deserialize)]
struct CameraFile {
    rotation: [f64; 9],
    translation: [f64; 3],
    pixel_scale: f64,
    height: usize,
    width: usize,
}

impl From<Camera> for CameraFile {
    fn from(c: Camera) -> Self {
        let r = c.rotation;
        Self {
            rotation: [r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]],
            translation: c.translation,
            pixel_scale: c.pixel_scale,
            height: c.height,
            width: c.width,
        }
    }
}

impl TryFrom<CameraFile> for Camera {
    type Error = SplatError;

    fn try_from(f: CameraFile) -> Result<Self> {
        let r = f.rotation;
        Camera::new([[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]], f.translation, f.pixel_scale, f.width, f.height)
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalized(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    (n > 1e-12).then(|| a.map(|v| v / n))
}

impl Camera {
    pub fn new(rotation: Mat3, translation: [f64; 3], pixel_scale: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self { rotation, translation, pixel_scale, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-6 {
                    return Err(SplatError::InvalidCamera(format!("rotation not orthonormal (RᵀR[{i}][{j}] = {dot})")));
                }
            }
        }
        if !(self.pixel_scale > 0.0 && self.pixel_scale.is_finite()) {
            return Err(SplatError::InvalidCamera(format!("pixel scale {}", self.pixel_scale)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SplatError::InvalidCamera(format!("image size {}x{}", self.width, self.height)));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, image up roughly along `up`.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], pixel_scale: f64, width: usize, height: usize) -> Result<Self> {
        let bad = || SplatError::InvalidCamera("degenerate look-at frame".into());
        let forward = normalized([target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]]).ok_or_else(bad)?;
        let right = normalized(cross(forward, up)).ok_or_else(bad)?;
        let down = cross(forward, right);
        let rotation = [right, down, forward];
        let t = mat_vec(&rotation, eye).map(|v| -v);
        Self::new(rotation, t, pixel_scale, width, height)
    }

    pub fn forward(&self) -> [f64; 3] {
        self.rotation[2]
    }

    pub fn principal_point(&self) -> [f64; 2] {
        [self.width as f64 / 2.0, self.height as f64 / 2.0]
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = mat_vec(&self.rotation, p);
        [r[0] + self.translation[0], r[1] + self.translation[1], r[2] + self.translation[2]]
    }

    /// Pixel coordinates (x right, y down; pixel `(i, j)` has center
    /// `(j + 0.5, i + 0.5)`) and camera-frame depth.
    pub fn project_point(&self, p: [f64; 3]) -> ([f64; 2], f64) {
        let c = self.to_camera(p);
        let pp = self.principal_point();
        ([self.pixel_scale * c[0] + pp[0], self.pixel_scale * c[1] + pp[1]], c[2])
    }
}
