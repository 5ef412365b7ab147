//! Minimal dense-tensor reverse-mode autodiff used by both training stages.
//!
//! All stored tensors are `f32`; reductions and normalization statistics
//! accumulate in `f64`. Ops are evaluated eagerly when recorded on a
//! [`Graph`], and [`Graph::backward`] sweeps the tape in reverse.

mod backward;
pub mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod optim;
pub mod rng;
mod tensor;

pub use backward::Gradients;
pub use error::{Result, TensorError};
pub use graph::{BinaryKind, CustomOp, Graph, UnaryKind, Var};
pub use optim::{AdamW, AdamWConfig};
pub use rng::{derive_seed, stream_rng, Rng};
pub use tensor::{numel, strides, Tensor};
