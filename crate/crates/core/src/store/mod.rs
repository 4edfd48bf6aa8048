//! Persistent storage: SFM1 spatial tensors and the image catalog.

mod catalog;
mod tensor;

use std::io;
use std::path::Path;

use thiserror::Error;

pub use catalog::{Catalog, CatalogStats, ImageRecord, ImageSource, IngestOutcome, LineRejection};
pub use tensor::{read_spatial_tensor, write_spatial_tensor, SpatialFeatureMap, SFM1_MAGIC};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("invalid tensor shape {height}x{width}x{channels}")]
    InvalidShape { height: usize, width: usize, channels: usize },
    #[error("expected {expected} values, got {actual}")]
    ValueCount { expected: usize, actual: usize },
    #[error("catalog line {line}: {reason}")]
    CatalogLine { line: usize, reason: String },
}

impl StoreError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io { path: path.display().to_string(), source }
    }
}
