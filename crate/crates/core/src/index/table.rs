//! EMB1 embedding tables.
//!
//! Layout (little-endian): magic `EMB1`; u32 row count; u32 dimension; then
//! per row a u64 image id followed by `dimension` f32 values.

use std::fs;
use std::path::Path;

use super::IndexError;

pub const EMB1_MAGIC: [u8; 4] = *b"EMB1";
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<u64>,
    values: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, ids: Vec::new(), values: Vec::new() }
    }

    pub fn push(&mut self, image_id: u64, values: &[f32]) -> Result<(), IndexError> {
        if self.ids.is_empty() && self.dim == 0 {
            self.dim = values.len();
        }
        if values.len() != self.dim {
            return Err(IndexError::DimensionMismatch { expected: self.dim, actual: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite(image_id));
        }
        self.ids.push(image_id);
        self.values.extend_from_slice(values);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (u64, &[f32])> {
        self.ids.iter().copied().zip((0..self.ids.len()).map(|i| self.row(i)))
    }

    pub fn to_emb1_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.ids.len() * (8 + 4 * self.dim));
        out.extend_from_slice(&EMB1_MAGIC);
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (id, row) in self.rows() {
            out.extend_from_slice(&id.to_le_bytes());
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_emb1_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < 4 || bytes[..4] != EMB1_MAGIC {
            let mut found = [0u8; 4];
            let n = bytes.len().min(4);
            found[..n].copy_from_slice(&bytes[..n]);
            return Err(IndexError::BadMagic { found });
        }
        if bytes.len() < HEADER_LEN {
            return Err(IndexError::Truncated { expected: HEADER_LEN, actual: bytes.len() });
        }
        let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let row_len = 8 + 4 * dim;
        let expected = count * row_len;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != expected {
            return Err(IndexError::Truncated { expected, actual: payload.len() });
        }
        let mut table = Self::new(dim);
        table.ids.reserve(count);
        table.values.reserve(count * dim);
        for row in payload.chunks_exact(row_len.max(1)).take(count) {
            let id = u64::from_le_bytes(row[..8].try_into().unwrap());
            let values: Vec<f32> = row[8..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            table.push(id, &values)?;
        }
        Ok(table)
    }
}

pub fn write_embedding_table(table: &EmbeddingTable, path: &Path) -> Result<u64, IndexError> {
    let bytes = table.to_emb1_bytes();
    fs::write(path, &bytes).map_err(|e| IndexError::Io { path: path.display().to_string(), source: e })?;
    Ok(bytes.len() as u64)
}

pub fn read_embedding_table(path: &Path) -> Result<EmbeddingTable, IndexError> {
    let bytes = fs::read(path).map_err(|e| IndexError::Io { path: path.display().to_string(), source: e })?;
    EmbeddingTable::from_emb1_bytes(&bytes)
}
