//! Joint PCA over the stacked cell descriptors of a query and a result.

use serde::{Deserialize, Serialize};

use super::{check_shapes, ExplainError};
use crate::store::SpatialFeatureMap;

/// Components whose variance falls below this fraction of the total are
/// treated as absent and render as mid-gray.
const DEGENERATE_FRACTION: f64 = 1e-9;
const MAX_SWEEPS: usize = 100;
pub(crate) const MID_GRAY: u8 = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbGrid {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbGrid {
    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn rows(&self) -> Vec<Vec<[u8; 3]>> {
        self.pixels.chunks(self.width.max(1)).map(<[[u8; 3]]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    pub query_rgb: RgbGrid,
    pub result_rgb: RgbGrid,
    /// Top three variances, non-increasing.
    pub eigenvalues: [f64; 3],
    /// Share of the total variance captured by the three kept components.
    pub explained_fraction: f64,
    /// Per-component share of the total variance.
    pub component_fractions: [f64; 3],
    pub total_variance: f64,
    /// Every variance of the stacked descriptors, non-increasing.
    pub spectrum: Vec<f64>,
    /// Unit principal directions in descriptor space, one per kept
    /// non-degenerate component.
    pub components: Vec<Vec<f64>>,
    /// Pre-quantization coordinates of each stacked cell (query cells first)
    /// on the three components; zero on degenerate ones.
    pub projections: Vec<[f64; 3]>,
}

/// JSON form of a correspondence map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceExport {
    pub eigenvalues: Vec<f64>,
    pub explained_fraction: f64,
    pub query_rgb: Vec<Vec<[u8; 3]>>,
    pub result_rgb: Vec<Vec<[u8; 3]>>,
}

impl CorrespondenceMap {
    pub fn export(&self) -> CorrespondenceExport {
        CorrespondenceExport {
            eigenvalues: self.eigenvalues.to_vec(),
            explained_fraction: self.explained_fraction,
            query_rgb: self.query_rgb.rows(),
            result_rgb: self.result_rgb.rows(),
        }
    }
}

/// Eigen-decomposition of a dense symmetric `n×n` matrix (row-major) by
/// cyclic Jacobi rotations.
///
/// Returns eigenvalues in non-increasing order and the matching unit
/// eigenvectors as columns of a row-major `n×n` matrix.
pub fn symmetric_eigen_jacobi(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(matrix.len(), n * n, "matrix must be n×n");
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob2: f64 = a.iter().map(|x| x * x).sum();
    let target = frob2 * 1e-30;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= target {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A ← Jᵀ A J, touching rows and columns p and q.
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + col] = v[row * n + src];
        }
    }
    (values, vectors)
}

/// Colors the cells of two maps so that cells with similar descriptors get
/// similar colors across both images.
///
/// The 2·H·W descriptors are stacked and centered, their top three principal
/// directions found through the Gram matrix, each signed so its largest
/// projection is positive, and the projections min-max scaled jointly over
/// both images onto 0..=255 as R, G, B.
pub fn pca_correspondence(fq: &SpatialFeatureMap, fr: &SpatialFeatureMap) -> Result<CorrespondenceMap, ExplainError> {
    check_shapes(fq, fr)?;
    let (h, w, c) = fq.shape();
    let n = 2 * h * w;
    if n < 4 {
        return Err(ExplainError::TooFewCells(n));
    }

    let mut x: Vec<f64> = fq.values().iter().chain(fr.values()).map(|&v| v as f64).collect();
    let mut mean = vec![0.0; c];
    for row in x.chunks(c) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for row in x.chunks_mut(c) {
        row.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    let row = |i: usize| &x[i * c..(i + 1) * c];

    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let g: f64 = row(i).iter().zip(row(j)).map(|(a, b)| a * b).sum();
            gram[i * n + j] = g;
            gram[j * n + i] = g;
        }
    }
    let total_variance = (0..n).map(|i| gram[i * n + i]).sum::<f64>() / n as f64;
    let (gram_values, gram_vectors) = symmetric_eigen_jacobi(&gram, n);
    let spectrum: Vec<f64> = gram_values.iter().map(|&g| (g / n as f64).max(0.0)).collect();

    let mut eigenvalues = [0.0; 3];
    let mut component_fractions = [0.0; 3];
    let mut components = Vec::new();
    let mut projections = vec![[0.0; 3]; n];
    for k in 0..3 {
        eigenvalues[k] = spectrum[k];
        if total_variance <= 0.0 {
            continue;
        }
        component_fractions[k] = spectrum[k] / total_variance;
        if spectrum[k] <= DEGENERATE_FRACTION * total_variance {
            continue;
        }
        // Descriptor-space direction Xᵀu, normalized.
        let mut dir = vec![0.0; c];
        for i in 0..n {
            let u = gram_vectors[i * n + k];
            dir.iter_mut().zip(row(i)).for_each(|(d, v)| *d += u * v);
        }
        let len = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|d| *d /= len);
        let mut proj: Vec<f64> = (0..n).map(|i| row(i).iter().zip(&dir).map(|(a, b)| a * b).sum()).collect();
        let mut peak = 0;
        for i in 1..n {
            if proj[i].abs() > proj[peak].abs() {
                peak = i;
            }
        }
        if proj[peak] < 0.0 {
            dir.iter_mut().for_each(|d| *d = -*d);
            proj.iter_mut().for_each(|p| *p = -*p);
        }
        for (i, p) in proj.into_iter().enumerate() {
            projections[i][k] = p;
        }
        components.push(dir);
    }
    let explained_fraction = component_fractions.iter().sum::<f64>().min(1.0);

    let mut colors = vec![[MID_GRAY; 3]; n];
    for k in 0..components.len() {
        let (lo, hi) = projections
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[k]), hi.max(p[k])));
        if hi > lo {
            for (color, p) in colors.iter_mut().zip(&projections) {
                color[k] = (255.0 * (p[k] - lo) / (hi - lo)).round_ties_even().clamp(0.0, 255.0) as u8;
            }
        }
    }
    let result_rgb = RgbGrid { height: h, width: w, pixels: colors.split_off(h * w) };
    let query_rgb = RgbGrid { height: h, width: w, pixels: colors };

    Ok(CorrespondenceMap {
        query_rgb,
        result_rgb,
        eigenvalues,
        explained_fraction,
        component_fractions,
        total_variance,
        spectrum,
        components,
        projections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> SpatialFeatureMap {
        SpatialFeatureMap::new(0, h, w, c, (0..h * w * c).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn jacobi_matches_dense_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [1, 2, 5, 17] {
            let b = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            let s = &b + b.transpose();
            let (values, vectors) = symmetric_eigen_jacobi(s.transpose().as_slice(), n);
            let mut oracle: Vec<f64> = SymmetricEigen::new(s.clone()).eigenvalues.iter().copied().collect();
            oracle.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in values.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
            let v = DMatrix::from_row_slice(n, n, &vectors);
            let residual = &s * &v - &v * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(values.clone()));
            assert!(residual.amax() < 1e-10);
            assert!((v.transpose() * &v - DMatrix::identity(n, n)).amax() < 1e-12);
        }
    }

    #[test]
    fn standard_grid_stacks_98_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_map(&mut rng, 7, 7, 32);
        let r = random_map(&mut rng, 7, 7, 32);
        let m = pca_correspondence(&q, &r).unwrap();
        assert_eq!(m.projections.len(), 98);
        assert_eq!(m.spectrum.len(), 98);
        assert_eq!(m.components.len(), 3);
        assert_eq!(m.query_rgb.pixels.len(), 49);
        assert!(m.eigenvalues[0] >= m.eigenvalues[1] && m.eigenvalues[1] >= m.eigenvalues[2]);
        let sum: f64 = m.spectrum.iter().sum();
        assert!((sum - m.total_variance).abs() <= 1e-6 * m.total_variance);
        for a in 0..3 {
            for b in 0..3 {
                let d: f64 = m.components[a].iter().zip(&m.components[b]).map(|(x, y)| x * y).sum();
                assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_inputs_color_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_map(&mut rng, 3, 4, 8);
        let m = pca_correspondence(&q, &q).unwrap();
        assert_eq!(m.query_rgb, m.result_rgb);
    }

    #[test]
    fn sign_rule_makes_peak_projection_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_map(&mut rng, 2, 3, 6);
        let r = random_map(&mut rng, 2, 3, 6);
        let m = pca_correspondence(&q, &r).unwrap();
        for k in 0..3 {
            let peak = m.projections.iter().map(|p| p[k]).max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
            assert!(peak > 0.0);
            // each channel spans the full byte range under joint scaling
            let channel: Vec<u8> = m.query_rgb.pixels.iter().chain(&m.result_rgb.pixels).map(|p| p[k]).collect();
            assert_eq!(channel.iter().min(), Some(&0));
            assert_eq!(channel.iter().max(), Some(&255));
        }
    }

    #[test]
    fn rank_one_stack() {
        let u = [0.6f32, -0.8, 0.0, 0.0];
        let base = [1.0f32, 2.0, 3.0, 4.0];
        let cells: Vec<f32> = (0..8)
            .flat_map(|i| {
                let alpha = (i * i) as f32 / 8.0;
                (0..4).map(move |k| base[k] + alpha * u[k])
            })
            .collect();
        let q = SpatialFeatureMap::new(0, 2, 2, 4, cells[..16].to_vec()).unwrap();
        let r = SpatialFeatureMap::new(0, 2, 2, 4, cells[16..].to_vec()).unwrap();
        let m = pca_correspondence(&q, &r).unwrap();
        assert!(m.component_fractions[0] >= 1.0 - 1e-6);
        assert!(m.explained_fraction >= 1.0 - 1e-6);
        assert_eq!(m.components.len(), 1);
        for p in m.query_rgb.pixels.iter().chain(&m.result_rgb.pixels) {
            assert_eq!((p[1], p[2]), (MID_GRAY, MID_GRAY));
        }
        // centered alpha peaks at the last cell, so red rises with alpha
        let reds: Vec<u8> = m.query_rgb.pixels.iter().chain(&m.result_rgb.pixels).map(|p| p[0]).collect();
        assert_eq!(reds.first(), Some(&0));
        assert_eq!(reds.last(), Some(&255));
    }

    #[test]
    fn zero_variance_renders_mid_gray() {
        let q = SpatialFeatureMap::new(0, 2, 2, 3, [0.5f32, 1.0, 2.0].repeat(4)).unwrap();
        let m = pca_correspondence(&q, &q).unwrap();
        assert_eq!(m.total_variance, 0.0);
        assert!(m.query_rgb.pixels.iter().all(|p| *p == [MID_GRAY; 3]));
        assert_eq!(m.eigenvalues, [0.0; 3]);
    }

    #[test]
    fn too_few_cells() {
        let q = SpatialFeatureMap::new(0, 1, 1, 3, vec![0.0; 3]).unwrap();
        assert_eq!(pca_correspondence(&q, &q), Err(ExplainError::TooFewCells(2)));
    }

    #[test]
    fn projection_is_a_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = random_map(&mut rng, 3, 3, 10);
        let r = random_map(&mut rng, 3, 3, 10);
        let m = pca_correspondence(&q, &r).unwrap();
        let stacked: Vec<&[f32]> = q.cells().chain(r.cells()).collect();
        for i in 0..stacked.len() {
            for j in 0..i {
                // centering cancels in differences
                let full: f64 = stacked[i].iter().zip(stacked[j]).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
                let proj: f64 = (0..3).map(|k| (m.projections[i][k] - m.projections[j][k]).powi(2)).sum();
                assert!(proj.sqrt() <= full.sqrt() + 1e-9);
            }
        }
    }
}
