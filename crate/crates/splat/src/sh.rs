//! Real spherical harmonics up to degree 3.
//!
//! Coefficients are stored coefficient-major: `h[k * 3 + channel]` for basis
//! function `k` in 0..16.

pub const SH_COEFFS: usize = 16;
pub const SH_LEN: usize = SH_COEFFS * 3;

pub const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Basis values for a unit direction.
pub fn sh_basis(dir: [f64; 3]) -> [f64; SH_COEFFS] {
    let [x, y, z] = dir;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        C0,
        -C1 * y,
        C1 * z,
        -C1 * x,
        C2[0] * x * y,
        C2[1] * y * z,
        C2[2] * (2.0 * zz - xx - yy),
        C2[3] * x * z,
        C2[4] * (xx - yy),
        C3[0] * y * (3.0 * xx - yy),
        C3[1] * x * y * z,
        C3[2] * y * (4.0 * zz - xx - yy),
        C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        C3[4] * x * (4.0 * zz - xx - yy),
        C3[5] * z * (xx - yy),
        C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Unclamped color `Σ_k h_k·Y_k + 0.5` per channel.
pub fn sh_raw(h: &[f32], basis: &[f64; SH_COEFFS]) -> [f64; 3] {
    let mut out = [0.5; 3];
    for (k, b) in basis.iter().enumerate() {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += h[k * 3 + ch] as f64 * b;
        }
    }
    out
}

pub fn eval_sh(h: &[f32], dir: [f64; 3]) -> [f32; 3] {
    let raw = sh_raw(h, &sh_basis(dir));
    raw.map(|v| v.clamp(0.0, 1.0) as f32)
}
