//! Pairwise match explanations.
//!
//! Two views of why a query and a result score as similar: a decomposition
//! of the pooled dot product into per-cell importances, and a joint PCA of
//! both images' cell descriptors rendered as matching colors.

mod pca;
mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{CellWeights, FeatureError};
use crate::store::SpatialFeatureMap;

pub use pca::{pca_correspondence, symmetric_eigen_jacobi, CorrespondenceExport, CorrespondenceMap, RgbGrid};
pub use render::{
    correspondence_image, encode_png, heat_color, heatmap_image, render_correspondence_pair, render_heatmap_pair,
    render_overlay, side_by_side, OverlayGrid, RenderMode,
};

const NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("shape mismatch: query grid {query:?} vs result grid {result:?}")]
    ShapeMismatch { query: (usize, usize, usize), result: (usize, usize, usize) },
    #[error("pooled vector norm {0:e} is too small to normalize")]
    ZeroNorm(f64),
    #[error("correspondence needs at least 4 stacked cells, got {0}")]
    TooFewCells(usize),
    #[error("cannot render an empty grid")]
    EmptyGrid,
    #[error("target {target:?} is smaller than grid {grid:?}")]
    InvalidTarget { target: (u32, u32), grid: (usize, usize) },
    #[error("unknown mode {0:?}; valid modes are heatmap, correspondence")]
    UnknownMode(String),
    #[error("png encoding failed: {0}")]
    Png(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// H×W grid of scalars in row-major cell order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarGrid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Nested rows, the shape used by the JSON exports.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.width.max(1)).map(<[f64]>::to_vec).collect()
    }
}

/// Dot products between every query cell and every result cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSimilarityMatrix {
    pub cells: usize,
    /// Row `i` holds `f_qi · f_rj` for all `j`.
    pub values: Vec<f64>,
}

impl CellSimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cells + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapPair {
    pub query_importance: ScalarGrid,
    pub result_importance: ScalarGrid,
    /// Sum of either importance grid: the pooled dot product, divided by
    /// `normalizer` when normalized.
    pub total_similarity: f64,
    /// Product of the two pooled-vector norms.
    pub normalizer: f64,
    pub normalized: bool,
}

/// JSON form of a heatmap pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapExport {
    pub query: Vec<Vec<f64>>,
    pub result: Vec<Vec<f64>>,
    pub total_similarity: f64,
}

impl HeatmapPair {
    pub fn export(&self) -> HeatmapExport {
        HeatmapExport {
            query: self.query_importance.rows(),
            result: self.result_importance.rows(),
            total_similarity: self.total_similarity,
        }
    }
}

pub(crate) fn check_shapes(fq: &SpatialFeatureMap, fr: &SpatialFeatureMap) -> Result<(), ExplainError> {
    if fq.shape() != fr.shape() {
        return Err(ExplainError::ShapeMismatch { query: fq.shape(), result: fr.shape() });
    }
    Ok(())
}

fn dot(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y).sum()
}

pub fn cell_similarity_matrix(
    fq: &SpatialFeatureMap,
    fr: &SpatialFeatureMap,
) -> Result<CellSimilarityMatrix, ExplainError> {
    check_shapes(fq, fr)?;
    let n = fq.cell_count();
    let mut values = Vec::with_capacity(n * n);
    for q in fq.cells() {
        for r in fr.cells() {
            values.push(q.iter().zip(r).map(|(&x, &y)| x as f64 * y as f64).sum());
        }
    }
    Ok(CellSimilarityMatrix { cells: n, values })
}

/// Weighted mean of the cells, in f64.
fn pool(map: &SpatialFeatureMap, weights: &CellWeights) -> Result<Vec<f64>, ExplainError> {
    if (weights.height, weights.width) != (map.height(), map.width()) {
        return Err(FeatureError::GridMismatch {
            weights: (weights.height, weights.width),
            features: (map.height(), map.width()),
        }
        .into());
    }
    let total = weights.total();
    if total <= 0.0 {
        return Err(FeatureError::FullyMasked.into());
    }
    let mut acc = vec![0.0f64; map.channels()];
    for (cell, &w) in map.cells().zip(&weights.weights) {
        if w != 0.0 {
            for (a, &v) in acc.iter_mut().zip(cell) {
                *a += w * v as f64;
            }
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(acc)
}

/// `c_i = w_i (f_i · p_other) / Σw`, which sums to `p_self · p_other`.
fn cell_importances(map: &SpatialFeatureMap, weights: &CellWeights, other_pool: &[f64], scale: f64) -> ScalarGrid {
    let total = weights.total();
    let values = map
        .cells()
        .zip(&weights.weights)
        .map(|(cell, &w)| w * dot(cell, other_pool) / total / scale)
        .collect();
    ScalarGrid { height: map.height(), width: map.width(), values }
}

/// Decomposes the pooled similarity of two unmasked maps into per-cell
/// importances.
///
/// Query cell `i` gets `(1/(H·W)²) Σ_j f_qi · f_rj`, computed as
/// `f_qi · p_r / (H·W)`; result cells symmetrically. Swapping the arguments
/// swaps the two grids exactly.
pub fn importance_maps(
    fq: &SpatialFeatureMap,
    fr: &SpatialFeatureMap,
    normalize: bool,
) -> Result<HeatmapPair, ExplainError> {
    check_shapes(fq, fr)?;
    let uniform = CellWeights::uniform(fq.height(), fq.width());
    importance_maps_weighted(fq, &uniform, fr, &uniform, normalize)
}

/// Like [`importance_maps`], with each side pooled under its own cell
/// weights (a masked query, say). Masked cells get zero importance and the
/// grids still sum to the weighted pooled dot product.
pub fn importance_maps_weighted(
    fq: &SpatialFeatureMap,
    query_weights: &CellWeights,
    fr: &SpatialFeatureMap,
    result_weights: &CellWeights,
    normalize: bool,
) -> Result<HeatmapPair, ExplainError> {
    check_shapes(fq, fr)?;
    let pq = pool(fq, query_weights)?;
    let pr = pool(fr, result_weights)?;
    let norm = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (nq, nr) = (norm(&pq), norm(&pr));
    let normalizer = nq * nr;
    let scale = if normalize {
        let smallest = nq.min(nr);
        if smallest <= NORM_EPSILON {
            return Err(ExplainError::ZeroNorm(smallest));
        }
        normalizer
    } else {
        1.0
    };
    let query_importance = cell_importances(fq, query_weights, &pr, scale);
    let result_importance = cell_importances(fr, result_weights, &pq, scale);
    let total_similarity = pq.iter().zip(&pr).map(|(a, b)| a * b).sum::<f64>() / scale;
    debug_assert!({
        let tol = 1e-6 * (total_similarity.abs() + 1e-12) + 1e-9;
        (query_importance.sum() - total_similarity).abs() <= tol * (1.0 + query_importance.values.len() as f64)
    });
    Ok(HeatmapPair { query_importance, result_importance, total_similarity, normalizer, normalized: normalize })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{cosine_similarity, image_embedding};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map(h: usize, w: usize, c: usize, values: &[f32]) -> SpatialFeatureMap {
        SpatialFeatureMap::new(0, h, w, c, values.to_vec()).unwrap()
    }

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> SpatialFeatureMap {
        map(h, w, c, &(0..h * w * c).map(|_| rng.random::<f32>()).collect::<Vec<_>>())
    }

    #[test]
    fn hand_computed_cell_similarities() {
        let q = map(1, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let r = map(1, 2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let m = cell_similarity_matrix(&q, &r).unwrap();
        assert_eq!(m.values, vec![1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn standard_grid_has_49_by_49_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_map(&mut rng, 7, 7, 16);
        let r = random_map(&mut rng, 7, 7, 16);
        assert_eq!(cell_similarity_matrix(&q, &r).unwrap().values.len(), 49 * 49);
        let h = importance_maps(&q, &r, true).unwrap();
        assert_eq!((h.query_importance.height, h.query_importance.width), (7, 7));
    }

    #[test]
    fn orthogonal_cells_give_zero_matrix() {
        let q = map(1, 2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let r = map(1, 2, 4, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(cell_similarity_matrix(&q, &r).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_maps_spread_evenly() {
        let v = [0.5f32, 1.0, -2.0];
        let w = [1.0f32, 2.0, 0.25];
        let q = map(2, 3, 3, &v.repeat(6));
        let r = map(2, 3, 3, &w.repeat(6));
        let h = importance_maps(&q, &r, false).unwrap();
        let vw: f64 = v.iter().zip(&w).map(|(a, b)| *a as f64 * *b as f64).sum();
        for &c in &h.query_importance.values {
            assert!((c - vw / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_total_matches_cosine_of_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let q = random_map(&mut rng, 2, 2, 4);
            let r = random_map(&mut rng, 2, 2, 4);
            let h = importance_maps(&q, &r, true).unwrap();
            let cos = cosine_similarity(&image_embedding(&q).unwrap(), &image_embedding(&r).unwrap()).unwrap();
            // brute-force double sum over the cell similarity matrix
            let m = cell_similarity_matrix(&q, &r).unwrap();
            let double_sum: f64 = m.values.iter().sum::<f64>() / 16.0 / h.normalizer;
            assert!((h.query_importance.sum() - cos).abs() < 1e-6);
            assert!((h.result_importance.sum() - cos).abs() < 1e-6);
            assert!((double_sum - h.total_similarity).abs() < 1e-12);
        }
    }

    #[test]
    fn swapping_arguments_swaps_grids_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for normalize in [false, true] {
            let q = random_map(&mut rng, 3, 5, 7);
            let r = random_map(&mut rng, 3, 5, 7);
            let a = importance_maps(&q, &r, normalize).unwrap();
            let b = importance_maps(&r, &q, normalize).unwrap();
            assert_eq!(a.query_importance, b.result_importance);
            assert_eq!(a.result_importance, b.query_importance);
            assert_eq!(a.total_similarity.to_bits(), b.total_similarity.to_bits());
        }
    }

    #[test]
    fn masked_cells_carry_no_importance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_map(&mut rng, 2, 2, 3);
        let r = random_map(&mut rng, 2, 2, 3);
        let wq = CellWeights { height: 2, width: 2, weights: vec![1.0, 0.0, 0.5, 1.0] };
        let h = importance_maps_weighted(&q, &wq, &r, &CellWeights::uniform(2, 2), false).unwrap();
        assert_eq!(h.query_importance.values[1], 0.0);
        assert!((h.query_importance.sum() - h.total_similarity).abs() < 1e-12);
        assert!((h.result_importance.sum() - h.total_similarity).abs() < 1e-12);
        let none = CellWeights { height: 2, width: 2, weights: vec![0.0; 4] };
        assert_eq!(
            importance_maps_weighted(&q, &none, &r, &CellWeights::uniform(2, 2), false),
            Err(ExplainError::Feature(FeatureError::FullyMasked))
        );
    }

    #[test]
    fn errors() {
        let a = map(1, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = map(2, 1, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(cell_similarity_matrix(&a, &b), Err(ExplainError::ShapeMismatch { .. })));
        let zero = map(1, 2, 2, &[0.0; 4]);
        assert!(matches!(importance_maps(&a, &zero, true), Err(ExplainError::ZeroNorm(_))));
        assert_eq!(importance_maps(&a, &zero, false).unwrap().total_similarity, 0.0);
    }
}
