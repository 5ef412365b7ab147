//! `.wsdm` diffusion model container.
//!
//! Magic `WSDM`, version `u32`, header length `u32`, a JSON header (denoiser
//! and schedule configs, token layout, record layer shapes, parameter names
//! and shapes), then the standardizer mean and std as `D` little-endian
//! `f32` each, then every parameter tensor in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wsd_tensor::Tensor;
use wsd_weights::{LayerShape, Standardizer, TokenLayout};

use crate::error::{DiffusionError, Result};
use crate::model::{Denoiser, DenoiserConfig};
use crate::schedule::{Schedule, ScheduleConfig};
use crate::train::TrainConfig;

pub const MAGIC: [u8; 4] = *b"WSDM";
pub const VERSION: u32 = 1;

/// A trained denoiser with everything needed to sample weight records.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub denoiser: Denoiser,
    pub schedule: ScheduleConfig,
    pub standardizer: Standardizer,
    pub shapes: Vec<LayerShape>,
    pub train: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    denoiser: DenoiserConfig,
    schedule: ScheduleConfig,
    layout: TokenLayout,
    shapes: Vec<LayerShape>,
    params: Vec<(String, Vec<usize>)>,
    train: Option<TrainConfig>,
}

fn bad(msg: impl Into<String>) -> DiffusionError {
    DiffusionError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.schedule)
    }

    fn check(&self) -> Result<()> {
        let dim: usize = self.shapes.iter().map(|s| s.len()).sum();
        if dim != self.denoiser.layout.dim || dim != self.standardizer.dim() {
            return Err(bad(format!(
                "record dimension {dim}, layout {}, standardizer {}",
                self.denoiser.layout.dim,
                self.standardizer.dim()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check()?;
        let header = Header {
            denoiser: self.denoiser.config.clone(),
            schedule: self.schedule,
            layout: self.denoiser.layout.clone(),
            shapes: self.shapes.clone(),
            params: self.denoiser.params.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect(),
            train: self.train.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let floats = self
            .standardizer
            .mean()
            .iter()
            .chain(self.standardizer.std())
            .chain(self.denoiser.params.iter().flat_map(|(_, t)| t.data()));
        for v in floats {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = buf.get(pos..pos + n).ok_or_else(|| bad(format!("truncated at byte {pos}, need {n} more")))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let version = u32_at(take(4)?);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u32_at(take(4)?) as usize;
        let header: Header = serde_json::from_slice(take(hlen)?).map_err(|e| bad(format!("header: {e}")))?;
        let mut floats = |n: usize| -> Result<Vec<f32>> {
            Ok(take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
        };
        let d = header.layout.dim;
        let mean = floats(d)?;
        let std = floats(d)?;
        let mut denoiser = Denoiser::new(header.denoiser, header.layout, 0)?;
        let expected: Vec<(String, Vec<usize>)> =
            denoiser.params.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
        if expected != header.params {
            return Err(bad("parameter list does not match the denoiser config"));
        }
        for (_, t) in denoiser.params.iter_mut() {
            *t = Tensor::new(t.shape().to_vec(), floats(t.numel())?)?;
        }
        if pos != buf.len() {
            return Err(bad(format!("{} trailing bytes", buf.len() - pos)));
        }
        let ckpt = Self {
            denoiser,
            schedule: header.schedule,
            standardizer: Standardizer::from_parts(mean, std)?,
            shapes: header.shapes,
            train: header.train,
        };
        ckpt.check()?;
        ckpt.schedule()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|source| DiffusionError::Io { path: path.to_owned(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|source| DiffusionError::Io { path: path.to_owned(), source })?;
        Self::from_bytes(&buf)
    }
}
