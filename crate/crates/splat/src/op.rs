use wsd_tensor::{CustomOp, Tensor, TensorError};

use crate::camera::Camera;
use crate::raster::{rasterize_backward, rasterize_params, GaussianParams, RasterConfig, RenderOutput};
use crate::sh::SH_LEN;

/// Graph node rendering Gaussians to a `[4, H, W]` image (rgb + opacity).
///
/// Inputs: positions `[N, 3]`, scales `[N, 3]`, quaternions `[N, 4]`,
/// opacity `[N, 1]`, SH coefficients `[N, 48]`.
#[derive(Clone, Debug)]
pub struct RasterOp {
    pub camera: Camera,
    pub config: RasterConfig,
}

fn custom_err(detail: impl ToString) -> TensorError {
    TensorError::Custom { name: "rasterize".into(), detail: detail.to_string() }
}

fn params<'a>(inputs: &[&'a Tensor]) -> wsd_tensor::Result<GaussianParams<'a>> {
    if inputs.len() != 5 {
        return Err(custom_err(format!("expected 5 inputs, got {}", inputs.len())));
    }
    let n = inputs[3].shape().first().copied().unwrap_or(0);
    let widths = [3, 3, 4, 1, SH_LEN];
    for (k, (t, w)) in inputs.iter().zip(widths).enumerate() {
        if t.shape() != [n, w] {
            return Err(custom_err(format!("input {k} has shape {:?}, expected [{n}, {w}]", t.shape())));
        }
    }
    Ok(GaussianParams {
        positions: inputs[0].data(),
        scales: inputs[1].data(),
        quats: inputs[2].data(),
        opacity: inputs[3].data(),
        sh: inputs[4].data(),
    })
}

impl CustomOp for RasterOp {
    fn name(&self) -> &str {
        "rasterize"
    }

    fn forward(&self, inputs: &[&Tensor]) -> wsd_tensor::Result<Tensor> {
        let p = params(inputs)?;
        let out = rasterize_params(&p, &self.camera, &self.config).map_err(custom_err)?;
        Ok(out.to_chw())
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> wsd_tensor::Result<Vec<Option<Tensor>>> {
        let p = params(inputs)?;
        let up = RenderOutput::from_chw(grad_output).map_err(custom_err)?;
        let g = rasterize_backward(&p, &self.camera, &self.config, &up.rgb, &up.opacity).map_err(custom_err)?;
        let n = p.len();
        let t = |shape: [usize; 2], data: Vec<f32>| Tensor::new(shape, data).map(Some);
        Ok(vec![
            t([n, 3], g.positions)?,
            t([n, 3], g.scales)?,
            t([n, 4], g.quats)?,
            t([n, 1], g.opacity)?,
            t([n, SH_LEN], g.sh)?,
        ])
    }
}
