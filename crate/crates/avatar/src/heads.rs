//! Raw 59-channel network output to bounded Gaussian parameters.
//!
//! Channels: 0–2 offset, 3–5 scale, 6–9 rotation, 10 opacity, 11–58 SH.

use wsd_splat::SH_LEN;
use wsd_tensor::{Graph, Tensor, Var};

use crate::error::{AvatarError, Result};

pub const RAW_CHANNELS: usize = 59;
pub const OFFSET_MAX: f32 = 0.05;
pub const SCALE_MIN: f32 = 1e-3;
pub const SCALE_MAX: f32 = 0.05;

/// Decoded parameters for `N` Gaussians, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedMap {
    pub offsets: Vec<f32>,
    pub scales: Vec<f32>,
    pub quats: Vec<f32>,
    pub opacity: Vec<f32>,
    pub sh: Vec<f32>,
}

impl DecodedMap {
    pub fn len(&self) -> usize {
        self.opacity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecodedVars {
    pub offsets: Var,
    pub scales: Var,
    pub quats: Var,
    pub opacity: Var,
    pub sh: Var,
}

/// Decode `[N, 59]` rows.
pub fn decode_heads(g: &mut Graph, raw: Var) -> Result<DecodedVars> {
    let shape = g.shape(raw).to_vec();
    if shape.len() != 2 || shape[1] != RAW_CHANNELS {
        return Err(AvatarError::Config(format!("decode_heads expects [N, {RAW_CHANNELS}], got {shape:?}")));
    }
    let n = shape[0];
    let d = g.slice(raw, 1, 0, 3)?;
    let d = g.tanh(d)?;
    let offsets = g.scale(d, OFFSET_MAX)?;

    let s = g.slice(raw, 1, 3, 6)?;
    let s = g.sigmoid(s)?;
    let s = g.scale(s, SCALE_MAX - SCALE_MIN)?;
    let scales = g.add_scalar(s, SCALE_MIN)?;

    let q = g.slice(raw, 1, 6, 10)?;
    let unit = g.input(Tensor::new([4], vec![1.0, 0.0, 0.0, 0.0])?);
    let q = g.add(q, unit)?;
    let q2 = g.mul(q, q)?;
    let norm2 = g.sum_axis(q2, 1)?;
    let norm2 = g.reshape(norm2, &[n, 1])?;
    let norm2 = g.add_scalar(norm2, 1e-12)?;
    let norm = g.sqrt(norm2)?;
    let quats = g.div(q, norm)?;

    let o = g.slice(raw, 1, 10, 11)?;
    let opacity = g.sigmoid(o)?;
    let sh = g.slice(raw, 1, 11, 11 + SH_LEN)?;
    Ok(DecodedVars { offsets, scales, quats, opacity, sh })
}

/// Decode a raw tensor of shape `[N, 59]` outside any training graph.
pub fn decode_rows(raw: &Tensor) -> Result<DecodedMap> {
    let mut g = Graph::new();
    let r = g.input(raw.clone());
    let v = decode_heads(&mut g, r)?;
    Ok(DecodedMap {
        offsets: g.value(v.offsets).data().to_vec(),
        scales: g.value(v.scales).data().to_vec(),
        quats: g.value(v.quats).data().to_vec(),
        opacity: g.value(v.opacity).data().to_vec(),
        sh: g.value(v.sh).data().to_vec(),
    })
}

/// Rows of the valid texels from a `[1, 59, T, T]` network output.
pub fn select_texels(g: &mut Graph, raw_map: Var, texels: &std::sync::Arc<Vec<usize>>) -> Result<Var> {
    let shape = g.shape(raw_map).to_vec();
    if shape.len() != 4 || shape[0] != 1 || shape[1] != RAW_CHANNELS {
        return Err(AvatarError::Config(format!("expected [1, {RAW_CHANNELS}, T, T], got {shape:?}")));
    }
    let hw = shape[2] * shape[3];
    let flat = g.reshape(raw_map, &[RAW_CHANNELS, hw])?;
    let rows = g.transpose(flat)?;
    Ok(g.index_select(rows, 0, texels.clone())?)
}
