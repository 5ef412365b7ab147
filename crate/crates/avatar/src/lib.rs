//! Per-identity pose-conditioned Gaussian avatars.
//!
//! A tube [`Template`] is posed with linear blend skinning; every valid
//! texel of its UV map anchors one Gaussian. A small UNet maps posed
//! normal/position maps to 59 raw channels per texel, [`decode_heads`]
//! bounds them, and [`WorldTransform`] carries the Gaussians to world space
//! for the splat rasterizer. [`synth`] renders ground-truth capture data and
//! [`fit`] trains one identity's network on it.

pub mod anchors;
pub mod error;
pub mod fit;
pub mod heads;
pub mod loss;
pub mod posemaps;
pub mod synth;
pub mod template;
pub mod unet;
pub mod world;

pub use anchors::AnchorMap;
pub use error::{AvatarError, Result};
pub use fit::{fit_identity, fit_identity_with, mean_offset_norm, predict, render, FitConfig, FitData, Frame, LossLog};
pub use heads::{decode_heads, decode_rows, DecodedMap, RAW_CHANNELS};
pub use loss::{training_loss, LossTerms, LossWeights, PerceptualProxy};
pub use posemaps::PoseMaps;
pub use synth::{generate_dataset, make_identity, oracle_gaussians, sample_pose_sequence, DatasetConfig, IdentitySpec, Manifest};
pub use template::{lbs, Pose, Template, TemplateConfig};
pub use unet::{unet_forward, unet_init, UNetConfig};
pub use world::WorldTransform;
