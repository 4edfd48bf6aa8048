//! SFM1 spatial feature tensor files.
//!
//! Layout (little-endian):
//! - magic: 4 bytes, ASCII `SFM1`
//! - height, width, channels: u32 each
//! - values: height * width * channels f32, row-major with channel fastest-varying

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::StoreError;

pub const SFM1_MAGIC: [u8; 4] = *b"SFM1";
const HEADER_LEN: usize = 16;

/// An H×W grid of C-dimensional local descriptors for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFeatureMap {
    image_id: u64,
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl SpatialFeatureMap {
    pub fn new(
        image_id: u64,
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f32>,
    ) -> Result<Self, StoreError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(StoreError::InvalidShape { height, width, channels });
        }
        let expected = height * width * channels;
        if values.len() != expected {
            return Err(StoreError::ValueCount { expected, actual: values.len() });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite { index });
        }
        Ok(Self { image_id, height, width, channels, values })
    }

    pub fn image_id(&self) -> u64 {
        self.image_id
    }

    pub fn with_image_id(mut self, image_id: u64) -> Self {
        self.image_id = image_id;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn cell_count(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Descriptor of cell `index` in row-major cell order.
    pub fn cell(&self, index: usize) -> &[f32] {
        let start = index * self.channels;
        &self.values[start..start + self.channels]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.channels)
    }

    /// Serialized SFM1 size in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.values.len() * 4
    }

    pub fn to_sfm1_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&SFM1_MAGIC);
        for dim in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes SFM1 bytes. The returned map carries `image_id` 0; callers
    /// attach the identity they know the file by.
    pub fn from_sfm1_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < 4 || bytes[..4] != SFM1_MAGIC {
            let mut found = [0u8; 4];
            let n = bytes.len().min(4);
            found[..n].copy_from_slice(&bytes[..n]);
            return Err(StoreError::BadMagic { expected: SFM1_MAGIC, found });
        }
        if bytes.len() < HEADER_LEN {
            return Err(StoreError::Truncated {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let dim = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (height, width, channels) = (dim(4), dim(8), dim(12));
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .and_then(|n| n.checked_mul(4))
            .ok_or(StoreError::InvalidShape { height, width, channels })?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != expected {
            return Err(StoreError::Truncated { expected, actual: payload.len() });
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(0, height, width, channels, values)
    }
}

/// Writes `map` as an SFM1 file and returns the number of bytes written.
///
/// Nothing is created on disk if the map holds a non-finite value.
pub fn write_spatial_tensor(map: &SpatialFeatureMap, destination: &Path) -> Result<u64, StoreError> {
    if let Some(index) = map.values.iter().position(|v| !v.is_finite()) {
        return Err(StoreError::NonFinite { index });
    }
    let bytes = map.to_sfm1_bytes();
    let file = File::create(destination).map_err(|e| StoreError::io(destination, e))?;
    let mut writer = BufWriter::new(file);
    writer
        .write_all(&bytes)
        .and_then(|_| writer.flush())
        .map_err(|e| StoreError::io(destination, e))?;
    Ok(bytes.len() as u64)
}

/// Reads an SFM1 file. The image id is taken from a numeric file stem
/// (`42.sfm` → 42) when present, otherwise 0.
pub fn read_spatial_tensor(source: &Path) -> Result<SpatialFeatureMap, StoreError> {
    let mut bytes = Vec::new();
    File::open(source)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| StoreError::io(source, e))?;
    let image_id = source
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse::<u64>().ok())
        .unwrap_or(0);
    Ok(SpatialFeatureMap::from_sfm1_bytes(&bytes)?.with_image_id(image_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(h: usize, w: usize, c: usize, values: Vec<f32>) -> SpatialFeatureMap {
        SpatialFeatureMap::new(0, h, w, c, values).unwrap()
    }

    #[test]
    fn standard_tensor_file_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("1.sfm");
        let m = map(7, 7, 2048, vec![0.25; 7 * 7 * 2048]);
        let written = write_spatial_tensor(&m, &path).unwrap();
        assert_eq!(written, 4 + 12 + 7 * 7 * 2048 * 4);
        assert_eq!(written, 401_424);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 401_424);
    }

    #[test]
    fn minimal_tensor_is_twenty_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sfm");
        let written = write_spatial_tensor(&map(1, 1, 1, vec![0.0]), &path).unwrap();
        assert_eq!(written, 20);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"SFM1");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[16..], &[0, 0, 0, 0]);
    }

    #[test]
    fn nan_is_rejected_before_any_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.sfm");
        // bypass the constructor to model a map corrupted after validation
        let bad = SpatialFeatureMap {
            image_id: 0,
            height: 1,
            width: 2,
            channels: 1,
            values: vec![1.0, f32::NAN],
        };
        let err = write_spatial_tensor(&bad, &path).unwrap_err();
        assert!(matches!(err, StoreError::NonFinite { index: 1 }));
        assert!(!path.exists());
        assert!(SpatialFeatureMap::new(0, 1, 1, 1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = map(1, 1, 1, vec![1.0]).to_sfm1_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        let err = SpatialFeatureMap::from_sfm1_bytes(&bytes).unwrap_err();
        assert!(matches!(err, StoreError::BadMagic { found, .. } if &found == b"XXXX"));
    }

    #[test]
    fn declared_shape_longer_than_payload() {
        // header says 2x2x3 = 12 floats, payload carries 11
        let mut bytes = b"SFM1".to_vec();
        for d in [2u32, 2, 3] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        for i in 0..11 {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        let err = SpatialFeatureMap::from_sfm1_bytes(&bytes).unwrap_err();
        assert!(matches!(err, StoreError::Truncated { expected: 48, actual: 44 }));
    }

    #[test]
    fn stored_non_finite_is_rejected_on_read() {
        let mut bytes = map(1, 1, 2, vec![1.0, 2.0]).to_sfm1_bytes();
        bytes[20..24].copy_from_slice(&f32::NEG_INFINITY.to_le_bytes());
        assert!(matches!(
            SpatialFeatureMap::from_sfm1_bytes(&bytes),
            Err(StoreError::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn file_stem_becomes_image_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("9001.sfm");
        write_spatial_tensor(&map(1, 2, 1, vec![3.0, -1.5]), &path).unwrap();
        let back = read_spatial_tensor(&path).unwrap();
        assert_eq!(back.image_id(), 9001);
        assert_eq!(back.cell(1), &[-1.5]);
    }

    proptest! {
        #[test]
        fn sfm1_round_trip_is_bitwise(
            (h, w, c, values) in (1usize..5, 1usize..5, 1usize..9).prop_flat_map(|(h, w, c)| {
                (Just(h), Just(w), Just(c),
                 proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::ZERO | proptest::num::f32::SUBNORMAL, h * w * c))
            })
        ) {
            let m = map(h, w, c, values);
            let back = SpatialFeatureMap::from_sfm1_bytes(&m.to_sfm1_bytes()).unwrap();
            let a: Vec<u32> = m.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(m.shape(), back.shape());
        }
    }
}
