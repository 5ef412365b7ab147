use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated data: needed {needed} bytes at offset {offset}, only {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("layer {layer}: {detail}")]
    InvalidLayer { layer: usize, detail: String },

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, WeightsError>;
