//! Weight records of fitted networks and their preparation for diffusion:
//! the `.wsdw` / `.wsds` binary formats, per-coordinate standardization and
//! tokenization into per-layer or fixed-size chunk tokens.

mod error;
pub mod format;
mod record;
mod standardize;
mod tokens;

pub use error::{Result, WeightsError};
pub use format::{load_pack, load_record, pack_from_bytes, pack_to_bytes, record_from_bytes, record_to_bytes, save_pack, save_record};
pub use record::{Layer, LayerShape, WeightRecord};
pub use standardize::{Standardizer, STD_FLOOR};
pub use tokens::{TokenLayout, TokenMode};
