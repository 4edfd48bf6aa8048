//! Masked global average pooling, normalization and similarity over
//! spatial feature maps.
//!
//! A mask is a set of polygons in normalized image coordinates (x to the
//! right, y down, both in `[0, 1]`). The image is split into the H×W grid of
//! the feature map; each cell's weight is the unmasked fraction of its
//! patch, estimated by supersampling. Pooling is then the weighted mean of
//! the cell descriptors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::SpatialFeatureMap;

pub const DEFAULT_SUPERSAMPLE: usize = 16;
const NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("polygon {polygon} has {vertices} vertices, at least 3 required")]
    DegeneratePolygon { polygon: usize, vertices: usize },
    #[error("polygon {polygon} vertex {vertex} lies outside the unit square")]
    VertexOutOfRange { polygon: usize, vertex: usize },
    #[error("grid must be at least 1x1 and supersample at least 1")]
    InvalidGrid,
    #[error("weight grid {weights:?} does not match feature grid {features:?}")]
    GridMismatch {
        weights: (usize, usize),
        features: (usize, usize),
    },
    #[error("fully masked query: no unmasked area left to pool")]
    FullyMasked,
    #[error("vector norm {0:e} is too small to normalize")]
    ZeroNorm(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding is not unit-normalized")]
    NotNormalized,
}

/// Investigator-drawn occlusion polygons, normalized coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub polygons: Vec<Vec<[f64; 2]>>,
}

impl MaskSpec {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        for (p, polygon) in self.polygons.iter().enumerate() {
            if polygon.len() < 3 {
                return Err(FeatureError::DegeneratePolygon {
                    polygon: p,
                    vertices: polygon.len(),
                });
            }
            for (v, [x, y]) in polygon.iter().enumerate() {
                if !(0.0..=1.0).contains(x) || !(0.0..=1.0).contains(y) {
                    return Err(FeatureError::VertexOutOfRange { polygon: p, vertex: v });
                }
            }
        }
        Ok(())
    }

    /// True when `(x, y)` lies inside any polygon under the even-odd rule.
    pub fn covers(&self, x: f64, y: f64) -> bool {
        self.polygons.iter().any(|poly| point_in_polygon(poly, x, y))
    }
}

fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Per-cell unmasked fractions, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellWeights {
    pub height: usize,
    pub width: usize,
    pub weights: Vec<f64>,
}

impl CellWeights {
    pub fn uniform(height: usize, width: usize) -> Self {
        Self { height, width, weights: vec![1.0; height * width] }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn rasterize_mask_weights(
    mask: &MaskSpec,
    grid: (usize, usize),
    supersample: usize,
) -> Result<CellWeights, FeatureError> {
    let (height, width) = grid;
    if height == 0 || width == 0 || supersample == 0 {
        return Err(FeatureError::InvalidGrid);
    }
    mask.validate()?;
    if mask.polygons.is_empty() {
        return Ok(CellWeights::uniform(height, width));
    }
    let samples = (supersample * supersample) as f64;
    let mut weights = Vec::with_capacity(height * width);
    for row in 0..height {
        for col in 0..width {
            let mut open = 0usize;
            for sy in 0..supersample {
                let y = (row as f64 + (sy as f64 + 0.5) / supersample as f64) / height as f64;
                for sx in 0..supersample {
                    let x = (col as f64 + (sx as f64 + 0.5) / supersample as f64) / width as f64;
                    if !mask.covers(x, y) {
                        open += 1;
                    }
                }
            }
            weights.push(open as f64 / samples);
        }
    }
    Ok(CellWeights { height, width, weights })
}

/// A pooled descriptor. `normalized` records whether it has unit norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f32>,
    pub normalized: bool,
}

impl Embedding {
    pub fn raw(values: Vec<f32>) -> Self {
        Self { values, normalized: false }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

/// Weighted mean of the cell descriptors: `Σ wᵢ fᵢ / Σ wᵢ`.
pub fn masked_gap_pool(map: &SpatialFeatureMap, weights: &CellWeights) -> Result<Embedding, FeatureError> {
    if (weights.height, weights.width) != (map.height(), map.width()) {
        return Err(FeatureError::GridMismatch {
            weights: (weights.height, weights.width),
            features: (map.height(), map.width()),
        });
    }
    let total = weights.total();
    if total <= 0.0 {
        return Err(FeatureError::FullyMasked);
    }
    let mut acc = vec![0.0f64; map.channels()];
    for (cell, &w) in map.cells().zip(&weights.weights) {
        if w == 0.0 {
            continue;
        }
        for (a, &f) in acc.iter_mut().zip(cell) {
            *a += w * f as f64;
        }
    }
    Ok(Embedding::raw(acc.into_iter().map(|a| (a / total) as f32).collect()))
}

pub fn l2_normalize(e: &Embedding) -> Result<Embedding, FeatureError> {
    let norm = e.norm();
    if norm <= NORM_EPSILON {
        return Err(FeatureError::ZeroNorm(norm));
    }
    Ok(Embedding {
        values: e.values.iter().map(|&v| (v as f64 / norm) as f32).collect(),
        normalized: true,
    })
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, FeatureError> {
    if a.dim() != b.dim() {
        return Err(FeatureError::DimensionMismatch(a.dim(), b.dim()));
    }
    if !a.normalized || !b.normalized {
        return Err(FeatureError::NotNormalized);
    }
    Ok(dot_f32(&a.values, &b.values))
}

pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Masked, pooled and normalized retrieval embedding of a query map.
pub fn query_embedding(map: &SpatialFeatureMap, mask: &MaskSpec) -> Result<Embedding, FeatureError> {
    let weights = rasterize_mask_weights(mask, (map.height(), map.width()), DEFAULT_SUPERSAMPLE)?;
    l2_normalize(&masked_gap_pool(map, &weights)?)
}

/// Unmasked pooled and normalized embedding, as stored in the index.
pub fn image_embedding(map: &SpatialFeatureMap) -> Result<Embedding, FeatureError> {
    let weights = CellWeights::uniform(map.height(), map.width());
    l2_normalize(&masked_gap_pool(map, &weights)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_square() -> Vec<[f64; 2]> {
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    }

    fn fmap(h: usize, w: usize, c: usize, values: Vec<f32>) -> SpatialFeatureMap {
        SpatialFeatureMap::new(0, h, w, c, values).unwrap()
    }

    #[test]
    fn empty_mask_is_all_ones() {
        for grid in [(1, 1), (7, 7), (3, 5)] {
            let w = rasterize_mask_weights(&MaskSpec::empty(), grid, 16).unwrap();
            assert!(w.weights.iter().all(|&x| x == 1.0));
            assert_eq!(w.weights.len(), grid.0 * grid.1);
        }
    }

    #[test]
    fn full_frame_mask_is_all_zero() {
        let mask = MaskSpec { polygons: vec![unit_square()] };
        let w = rasterize_mask_weights(&mask, (7, 7), 16).unwrap();
        assert!(w.weights.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn left_half_mask() {
        let mask = MaskSpec {
            polygons: vec![vec![[0.0, 0.0], [0.5, 0.0], [0.5, 1.0], [0.0, 1.0]]],
        };
        let w = rasterize_mask_weights(&mask, (1, 2), 16).unwrap();
        assert_abs_diff_eq!(w.weights[0], 0.0, epsilon = 1.0 / 16.0);
        assert_abs_diff_eq!(w.weights[1], 1.0, epsilon = 1.0 / 16.0);
    }

    #[test]
    fn diagonal_triangle_area_within_sampling_error() {
        // lower-left triangle of the unit square covers half of a 1x1 grid
        let mask = MaskSpec { polygons: vec![vec![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]]] };
        let w = rasterize_mask_weights(&mask, (1, 1), 16).unwrap();
        assert_abs_diff_eq!(w.weights[0], 0.5, epsilon = 1.0 / 16.0);
    }

    #[test]
    fn overlapping_polygons_mask_union() {
        let left = vec![[0.0, 0.0], [0.5, 0.0], [0.5, 1.0], [0.0, 1.0]];
        let mask = MaskSpec { polygons: vec![left.clone(), left] };
        let w = rasterize_mask_weights(&mask, (1, 2), 8).unwrap();
        assert_eq!(w.weights, vec![0.0, 1.0]);
    }

    #[test]
    fn degenerate_and_out_of_range_polygons() {
        let mask = MaskSpec { polygons: vec![vec![[0.0, 0.0], [1.0, 1.0]]] };
        assert_eq!(
            rasterize_mask_weights(&mask, (2, 2), 4),
            Err(FeatureError::DegeneratePolygon { polygon: 0, vertices: 2 })
        );
        let mask = MaskSpec { polygons: vec![vec![[0.0, 0.0], [1.2, 0.0], [0.0, 1.0]]] };
        assert!(matches!(
            rasterize_mask_weights(&mask, (2, 2), 4),
            Err(FeatureError::VertexOutOfRange { .. })
        ));
    }

    #[test]
    fn mask_json_shape() {
        let mask: MaskSpec =
            serde_json::from_str(r#"{"polygons": [[[0,0],[0.5,0],[0.5,1]]]}"#).unwrap();
        assert_eq!(mask.polygons[0][1], [0.5, 0.0]);
    }

    #[test]
    fn pooling_constant_cells() {
        let v = [0.5f32, -1.0, 2.0];
        let values: Vec<f32> = (0..49).flat_map(|_| v).collect();
        let pooled = masked_gap_pool(&fmap(7, 7, 3, values), &CellWeights::uniform(7, 7)).unwrap();
        assert_eq!(pooled.values, v);
        assert!(!pooled.normalized);
    }

    #[test]
    fn pooling_two_cells() {
        let m = fmap(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let both = CellWeights { height: 2, width: 1, weights: vec![1.0, 1.0] };
        assert_eq!(masked_gap_pool(&m, &both).unwrap().values, vec![0.5, 0.5]);
        let first = CellWeights { height: 2, width: 1, weights: vec![1.0, 0.0] };
        assert_eq!(masked_gap_pool(&m, &first).unwrap().values, vec![1.0, 0.0]);
    }

    #[test]
    fn fully_masked_pool_errors() {
        let m = fmap(1, 2, 1, vec![1.0, 2.0]);
        let none = CellWeights { height: 1, width: 2, weights: vec![0.0, 0.0] };
        assert_eq!(masked_gap_pool(&m, &none), Err(FeatureError::FullyMasked));
        let full = MaskSpec { polygons: vec![unit_square()] };
        assert_eq!(query_embedding(&m, &full), Err(FeatureError::FullyMasked));
    }

    #[test]
    fn pooling_grid_mismatch() {
        let m = fmap(1, 2, 1, vec![1.0, 2.0]);
        assert!(matches!(
            masked_gap_pool(&m, &CellWeights::uniform(2, 1)),
            Err(FeatureError::GridMismatch { .. })
        ));
    }

    #[test]
    fn normalize_three_four_five() {
        let n = l2_normalize(&Embedding::raw(vec![3.0, 4.0])).unwrap();
        assert_abs_diff_eq!(n.values[0], 0.6, epsilon = 1e-7);
        assert_abs_diff_eq!(n.values[1], 0.8, epsilon = 1e-7);
        assert!(n.normalized);
        let again = l2_normalize(&n).unwrap();
        for (a, b) in again.values.iter().zip(&n.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
        let unit = l2_normalize(&Embedding::raw(vec![0.0, 1.0, 0.0])).unwrap();
        assert_eq!(unit.values, vec![0.0, 1.0, 0.0]);
        assert!(matches!(
            l2_normalize(&Embedding::raw(vec![0.0; 4])),
            Err(FeatureError::ZeroNorm(_))
        ));
    }

    #[test]
    fn cosine_examples() {
        let unit = |v: Vec<f32>| Embedding { values: v, normalized: true };
        let v = l2_normalize(&Embedding::raw(vec![1.0, 2.0, 3.0])).unwrap();
        assert_abs_diff_eq!(cosine_similarity(&v, &v).unwrap(), 1.0, epsilon = 1e-6);
        assert_eq!(cosine_similarity(&unit(vec![1.0, 0.0]), &unit(vec![0.0, 1.0])).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine_similarity(&unit(vec![0.6, 0.8]), &unit(vec![1.0, 0.0])).unwrap(),
            0.6,
            epsilon = 1e-7
        );
        assert_eq!(
            cosine_similarity(&unit(vec![1.0]), &unit(vec![1.0, 0.0])),
            Err(FeatureError::DimensionMismatch(1, 2))
        );
        assert_eq!(
            cosine_similarity(&Embedding::raw(vec![3.0]), &unit(vec![1.0])),
            Err(FeatureError::NotNormalized)
        );
    }

    fn rel_close(a: &[f32], b: &[f32], tol: f64) -> bool {
        let scale = b.iter().map(|v| v.abs() as f64).fold(0.0, f64::max).max(1e-30);
        a.iter().zip(b).all(|(x, y)| ((*x as f64) - (*y as f64)).abs() <= tol * scale)
    }

    fn map_strategy() -> impl Strategy<Value = (usize, usize, usize, Vec<f32>, Vec<f32>, Vec<f64>)> {
        (1usize..5, 1usize..5, 1usize..6).prop_flat_map(|(h, w, c)| {
            let n = h * w * c;
            (
                Just(h),
                Just(w),
                Just(c),
                proptest::collection::vec(0.0f32..4.0, n),
                proptest::collection::vec(0.0f32..4.0, n),
                proptest::collection::vec(0.05f64..1.0, h * w),
            )
        })
    }

    proptest! {
        #[test]
        fn uniform_weights_equal_plain_mean((h, w, c, f, _g, _wts) in map_strategy(), scale in 0.1f64..5.0) {
            let m = fmap(h, w, c, f.clone());
            let weights = CellWeights { height: h, width: w, weights: vec![scale; h * w] };
            let pooled = masked_gap_pool(&m, &weights).unwrap();
            let mean: Vec<f32> = (0..c)
                .map(|ch| (f.iter().skip(ch).step_by(c).map(|&v| v as f64).sum::<f64>() / (h * w) as f64) as f32)
                .collect();
            prop_assert!(rel_close(&pooled.values, &mean, 1e-6));
        }

        #[test]
        fn pooling_is_linear_and_scale_free((h, w, c, f, g, wts) in map_strategy(), alpha in 0.1f32..3.0, beta in 0.1f32..3.0, k in 0.01f64..100.0) {
            let weights = CellWeights { height: h, width: w, weights: wts.clone() };
            let mixed: Vec<f32> = f.iter().zip(&g).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = masked_gap_pool(&fmap(h, w, c, mixed), &weights).unwrap();
            let pf = masked_gap_pool(&fmap(h, w, c, f.clone()), &weights).unwrap();
            let pg = masked_gap_pool(&fmap(h, w, c, g), &weights).unwrap();
            let rhs: Vec<f32> = pf.values.iter().zip(&pg.values).map(|(a, b)| alpha * a + beta * b).collect();
            prop_assert!(rel_close(&lhs.values, &rhs, 1e-5));

            let scaled = CellWeights { height: h, width: w, weights: wts.iter().map(|x| x * k).collect() };
            let ps = masked_gap_pool(&fmap(h, w, c, f), &scaled).unwrap();
            prop_assert!(rel_close(&ps.values, &pf.values, 1e-6));
        }

        #[test]
        fn cosine_is_symmetric_and_bounded(a in proptest::collection::vec(-5.0f32..5.0, 8), b in proptest::collection::vec(-5.0f32..5.0, 8)) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
            let a = l2_normalize(&Embedding::raw(a)).unwrap();
            let b = l2_normalize(&Embedding::raw(b)).unwrap();
            let ab = cosine_similarity(&a, &b).unwrap();
            prop_assert_eq!(ab.to_bits(), cosine_similarity(&b, &a).unwrap().to_bits());
            prop_assert!(ab.abs() <= 1.0 + 1e-6);
        }
    }
}
