use serde::{Deserialize, Serialize};

use crate::error::{Result, WeightsError};
use crate::record::{LayerShape, WeightRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    /// One token per layer: flattened kernel followed by bias.
    Layerwise,
    /// The whole vector zero-padded and cut into equal chunks.
    Flat { chunk: usize },
}

/// How a flat weight vector of dimension `dim` is cut into tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub mode: TokenMode,
    pub widths: Vec<usize>,
    pub padding: usize,
    pub dim: usize,
}

impl TokenLayout {
    pub fn layerwise(shapes: &[LayerShape]) -> Self {
        let widths: Vec<usize> = shapes.iter().map(|s| s.len()).collect();
        let dim = widths.iter().sum();
        Self { mode: TokenMode::Layerwise, widths, padding: 0, dim }
    }

    pub fn flat(dim: usize, chunk: usize) -> Result<Self> {
        if chunk == 0 || dim == 0 {
            return Err(WeightsError::Layout(format!("flat layout needs positive dimension and chunk, got {dim} and {chunk}")));
        }
        let count = dim.div_ceil(chunk);
        Ok(Self { mode: TokenMode::Flat { chunk }, widths: vec![chunk; count], padding: count * chunk - dim, dim })
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }

    pub fn tokenize(&self, flat: &[f32]) -> Result<Vec<Vec<f32>>> {
        if flat.len() != self.dim {
            return Err(WeightsError::Layout(format!("vector of length {}, layout dimension {}", flat.len(), self.dim)));
        }
        let mut padded = flat.to_vec();
        padded.resize(self.dim + self.padding, 0.0);
        let mut off = 0;
        Ok(self
            .widths
            .iter()
            .map(|&w| {
                let t = padded[off..off + w].to_vec();
                off += w;
                t
            })
            .collect())
    }

    pub fn detokenize(&self, tokens: &[Vec<f32>]) -> Result<Vec<f32>> {
        if tokens.len() != self.widths.len() {
            return Err(WeightsError::Layout(format!("{} tokens, layout has {}", tokens.len(), self.widths.len())));
        }
        let mut out = Vec::with_capacity(self.dim + self.padding);
        for (i, (t, &w)) in tokens.iter().zip(&self.widths).enumerate() {
            if t.len() != w {
                return Err(WeightsError::Layout(format!("token {i} has width {}, expected {w}", t.len())));
            }
            out.extend_from_slice(t);
        }
        out.truncate(self.dim);
        Ok(out)
    }

    pub fn tokenize_record(&self, record: &WeightRecord) -> Result<Vec<Vec<f32>>> {
        if let TokenMode::Layerwise = self.mode {
            let widths: Vec<usize> = record.layers.iter().map(|l| l.shape.len()).collect();
            if widths != self.widths {
                return Err(WeightsError::Layout(format!("record layer widths {widths:?}, layout {:?}", self.widths)));
            }
        }
        self.tokenize(&record.flatten())
    }

    pub fn detokenize_record(&self, tokens: &[Vec<f32>], shapes: &[LayerShape]) -> Result<WeightRecord> {
        WeightRecord::from_flat(shapes, &self.detokenize(tokens)?)
    }
}
