use serde::{Deserialize, Serialize};

use crate::error::{Result, WeightsError};

/// Dimensions of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub c_out: usize,
    pub c_in: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub bias_len: usize,
}

impl LayerShape {
    pub fn conv(c_out: usize, c_in: usize, k: usize) -> Self {
        Self { c_out, c_in, k_h: k, k_w: k, bias_len: c_out }
    }

    pub fn kernel_len(&self) -> usize {
        self.c_out * self.c_in * self.k_h * self.k_w
    }

    /// Kernel plus bias scalar count.
    pub fn len(&self) -> usize {
        self.kernel_len() + self.bias_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub shape: LayerShape,
    /// Row-major `(C_out, C_in, K_h, K_w)`.
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Ordered kernels and biases of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightRecord {
    pub layers: Vec<Layer>,
}

impl WeightRecord {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.kernel.len() != l.shape.kernel_len() || l.bias.len() != l.shape.bias_len {
                return Err(WeightsError::InvalidLayer {
                    layer: i,
                    detail: format!(
                        "{:?} needs {} kernel and {} bias values, got {} and {}",
                        l.shape,
                        l.shape.kernel_len(),
                        l.shape.bias_len,
                        l.kernel.len(),
                        l.bias.len()
                    ),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn zeros(shapes: &[LayerShape]) -> Self {
        Self {
            layers: shapes
                .iter()
                .map(|&shape| Layer { shape, kernel: vec![0.0; shape.kernel_len()], bias: vec![0.0; shape.bias_len] })
                .collect(),
        }
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers.iter().map(|l| l.shape).collect()
    }

    /// Total scalar count `D`.
    pub fn dim(&self) -> usize {
        self.layers.iter().map(|l| l.shape.len()).sum()
    }

    /// Kernel then bias for each layer in order.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.dim());
        for l in &self.layers {
            out.extend_from_slice(&l.kernel);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn from_flat(shapes: &[LayerShape], flat: &[f32]) -> Result<Self> {
        let d: usize = shapes.iter().map(|s| s.len()).sum();
        if flat.len() != d {
            return Err(WeightsError::Layout(format!("{} values for a record of dimension {d}", flat.len())));
        }
        let mut off = 0;
        let mut layers = Vec::with_capacity(shapes.len());
        for &shape in shapes {
            let k = shape.kernel_len();
            let kernel = flat[off..off + k].to_vec();
            let bias = flat[off + k..off + k + shape.bias_len].to_vec();
            off += shape.len();
            layers.push(Layer { shape, kernel, bias });
        }
        Ok(Self { layers })
    }

    pub fn check_shapes(&self, expected: &[LayerShape]) -> Result<()> {
        let got = self.shapes();
        if got != expected {
            let first = got.iter().zip(expected).position(|(a, b)| a != b).unwrap_or(got.len().min(expected.len()));
            return Err(WeightsError::Layout(format!(
                "record has {} layers, expected {}; first difference at layer {first}: got {:?}, expected {:?}",
                got.len(),
                expected.len(),
                got.get(first),
                expected.get(first)
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.kernel.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}
