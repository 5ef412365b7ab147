//! Constant-width convolutional encoder–decoder with skip connections.
//!
//! Layer order (also the order inside a [`WeightRecord`]):
//! input 3×3, then per level a stride-2 3×3 and a 3×3, a bottleneck 3×3,
//! then per level an upsample + 3×3 and a 3×3 fusing the concatenated skip,
//! and a final 1×1 to the raw channels. ReLU everywhere except the output.

use serde::{Deserialize, Serialize};
use wsd_tensor::{stream_rng, Graph, Tensor, Var};
use wsd_weights::{Layer, LayerShape, WeightRecord};

use crate::error::{AvatarError, Result};
use crate::heads::RAW_CHANNELS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub hidden: usize,
    pub levels: usize,
    pub out_channels: usize,
    /// UV resolution `T`.
    pub resolution: usize,
}

impl UNetConfig {
    pub fn desk() -> Self {
        Self { in_channels: 6, hidden: 8, levels: 3, out_channels: RAW_CHANNELS, resolution: 32 }
    }

    pub fn paper() -> Self {
        Self { in_channels: 6, hidden: 64, levels: 3, out_channels: RAW_CHANNELS, resolution: 256 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels != RAW_CHANNELS {
            return Err(AvatarError::Config(format!("output channels must be {RAW_CHANNELS}, got {}", self.out_channels)));
        }
        if self.levels < 1 || self.hidden == 0 || self.in_channels == 0 {
            return Err(AvatarError::Config(format!("degenerate network {self:?}")));
        }
        if self.resolution == 0 || self.resolution % (1 << self.levels) != 0 {
            return Err(AvatarError::Config(format!(
                "resolution {} must be a positive multiple of 2^levels = {}",
                self.resolution,
                1 << self.levels
            )));
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let c = self.hidden;
        let mut s = vec![LayerShape::conv(c, self.in_channels, 3)];
        for _ in 0..self.levels {
            s.push(LayerShape::conv(c, c, 3));
            s.push(LayerShape::conv(c, c, 3));
        }
        s.push(LayerShape::conv(c, c, 3));
        for _ in 0..self.levels {
            s.push(LayerShape::conv(c, c, 3));
            s.push(LayerShape::conv(c, 2 * c, 3));
        }
        s.push(LayerShape::conv(self.out_channels, c, 1));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|s| s.len()).sum()
    }
}

/// Kaiming-uniform kernels (bound `1/√fan_in`) and zero biases, each layer
/// drawn from its own stream of `seed`.
pub fn unet_init(config: &UNetConfig, seed: u64) -> Result<WeightRecord> {
    config.validate()?;
    let layers = config
        .layer_shapes()
        .into_iter()
        .enumerate()
        .map(|(i, shape)| {
            let fan_in = (shape.c_in * shape.k_h * shape.k_w) as f32;
            let bound = 1.0 / fan_in.sqrt();
            let mut rng = stream_rng(seed, i as u64);
            let kernel = Tensor::uniform([shape.kernel_len()], -bound, bound, &mut rng).into_data();
            Layer { shape, kernel, bias: vec![0.0; shape.bias_len] }
        })
        .collect();
    Ok(WeightRecord::new(layers)?)
}

pub fn check_record(config: &UNetConfig, record: &WeightRecord) -> Result<()> {
    let expected = config.layer_shapes();
    let got = record.shapes();
    if expected != got {
        let fmt = |s: &[LayerShape]| {
            s.iter().map(|l| format!("{}x{}x{}x{}", l.c_out, l.c_in, l.k_h, l.k_w)).collect::<Vec<_>>().join(", ")
        };
        return Err(AvatarError::WeightMismatch(format!("expected layers [{}], got [{}]", fmt(&expected), fmt(&got))));
    }
    Ok(())
}

/// Kernel and bias variables of every layer.
pub type UNetVars = Vec<(Var, Var)>;

pub fn bind(g: &mut Graph, config: &UNetConfig, record: &WeightRecord, trainable: bool) -> Result<UNetVars> {
    check_record(config, record)?;
    let mut vars = Vec::with_capacity(record.layers.len());
    for l in &record.layers {
        let s = l.shape;
        let k = Tensor::new([s.c_out, s.c_in, s.k_h, s.k_w], l.kernel.clone())?;
        let b = Tensor::new([s.c_out], l.bias.clone())?;
        let (k, b) = if trainable { (g.param(k), g.param(b)) } else { (g.input(k), g.input(b)) };
        vars.push((k, b));
    }
    Ok(vars)
}

/// `[1, in, T, T]` pose maps to `[1, 59, T, T]` raw output.
pub fn unet_forward(g: &mut Graph, config: &UNetConfig, vars: &UNetVars, input: Var) -> Result<Var> {
    let shape = g.shape(input).to_vec();
    let t = config.resolution;
    if shape != [1, config.in_channels, t, t] {
        return Err(AvatarError::Config(format!(
            "network input {shape:?}, expected [1, {}, {t}, {t}]",
            config.in_channels
        )));
    }
    if vars.len() != 4 * config.levels + 3 {
        return Err(AvatarError::WeightMismatch(format!("{} layers bound, expected {}", vars.len(), 4 * config.levels + 3)));
    }
    let mut layer = vars.iter();
    let mut conv = |g: &mut Graph, x: Var, stride: usize, relu: bool| -> Result<Var> {
        let (k, b) = *layer.next().expect("layer count checked");
        let pad = g.shape(k)[2] / 2;
        let y = g.conv2d(x, k, Some(b), stride, pad)?;
        Ok(if relu { g.relu(y)? } else { y })
    };
    let mut h = conv(g, input, 1, true)?;
    let mut skips = vec![h];
    for _ in 0..config.levels {
        h = conv(g, h, 2, true)?;
        h = conv(g, h, 1, true)?;
        skips.push(h);
    }
    skips.pop();
    h = conv(g, h, 1, true)?;
    for _ in 0..config.levels {
        let up = g.upsample2x(h)?;
        let up = conv(g, up, 1, true)?;
        let skip = skips.pop().expect("one skip per level");
        let cat = g.concat(&[up, skip], 1)?;
        h = conv(g, cat, 1, true)?;
    }
    conv(g, h, 1, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        let desk = UNetConfig::desk().param_count();
        assert!((10_000..1_000_000).contains(&desk), "{desk}");
        let paper = UNetConfig::paper().param_count();
        assert!((550_000..650_000).contains(&paper), "{paper}");
        assert_eq!(UNetConfig::desk().layer_shapes().len(), 15);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let cfg = UNetConfig { resolution: 16, ..UNetConfig::desk() };
        let rec = WeightRecord::zeros(&cfg.layer_shapes());
        let mut g = Graph::new();
        let vars = bind(&mut g, &cfg, &rec, false).unwrap();
        let mut rng = stream_rng(0, 0);
        let x = g.input(Tensor::uniform([1, 6, 16, 16], -1.0, 1.0, &mut rng));
        let y = unet_forward(&mut g, &cfg, &vars, x).unwrap();
        assert_eq!(g.shape(y), &[1, 59, 16, 16]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_record_lists_shapes() {
        let cfg = UNetConfig::desk();
        let other = unet_init(&UNetConfig { hidden: 4, ..cfg.clone() }, 0).unwrap();
        let err = check_record(&cfg, &other).unwrap_err().to_string();
        assert!(err.contains("8x6x3x3") && err.contains("4x6x3x3"), "{err}");
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = UNetConfig::desk();
        assert_eq!(unet_init(&cfg, 3).unwrap(), unet_init(&cfg, 3).unwrap());
        assert_ne!(unet_init(&cfg, 3).unwrap(), unet_init(&cfg, 4).unwrap());
    }
}
