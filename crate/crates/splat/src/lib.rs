//! Orthographic 3D Gaussian splatting.
//!
//! Gaussians are projected with an orthographic camera, depth sorted and
//! alpha composited per pixel. [`rasterize_backward`] is the exact
//! vector-Jacobian product of [`rasterize_params`]; [`RasterOp`] wraps the
//! pair as a node of a [`wsd_tensor::Graph`].

mod camera;
mod error;
mod gaussian;
mod op;
mod png;
mod raster;
pub mod sh;

pub use camera::Camera;
pub use error::{Result, SplatError};
pub use gaussian::{build_covariance, normalize_quat, quat_to_rot, Gaussian, Mat3, GAUSSIAN_PARAMS};
pub use op::RasterOp;
pub use png::{load_gray_png, load_rgb_png, save_gray_png, save_rgb_png};
pub use raster::{
    project, rasterize, rasterize_backward, rasterize_params, GaussianParams, GaussianSet, ParamGrads, Projected,
    RasterConfig, RenderOutput,
};
pub use sh::{eval_sh, SH_LEN};
