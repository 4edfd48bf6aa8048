//! Triplet losses over a squared-distance matrix.
//!
//! Every loss returns its value together with `∂loss/∂M`, the gradient with
//! respect to the distance matrix entries. The embedder turns that into a
//! weight gradient. Mined indices are constants of the batch.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::MetricError;

const UNIT_TOLERANCE: f64 = 1e-6;

/// `M[i][j] = ‖eᵢ − eⱼ‖² = 2 − 2·eᵢ·eⱼ` for unit-norm rows.
///
/// The result is exactly symmetric with an exactly zero diagonal.
pub fn pairwise_sq_distances(embeddings: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricError> {
    let n = embeddings.nrows();
    for (i, row) in embeddings.row_iter().enumerate() {
        let norm = row.norm();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(MetricError::NotNormalized { row: i, norm });
        }
    }
    let gram = embeddings * embeddings.transpose();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = 2.0 - 2.0 * gram[(i, j)];
            m[(i, j)] = d;
            m[(j, i)] = d;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinedTriplet {
    pub anchor: usize,
    /// Closest same-class sample, anchor excluded.
    pub positive: usize,
    /// Closest different-class sample.
    pub negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoPositive,
    NoNegative,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletSelection {
    pub triplets: Vec<MinedTriplet>,
    pub skipped: Vec<(usize, SkipReason)>,
}

fn check_inputs(m: &DMatrix<f64>, labels: &[u64]) -> Result<(), MetricError> {
    if !m.is_square() || m.nrows() != labels.len() {
        return Err(MetricError::ShapeMismatch(format!(
            "distance matrix {}x{} vs {} labels",
            m.nrows(),
            m.ncols(),
            labels.len()
        )));
    }
    if labels.len() < 2 {
        return Err(MetricError::BatchTooSmall(labels.len()));
    }
    Ok(())
}

fn check_margin(margin: f64) -> Result<(), MetricError> {
    if margin > 0.0 && margin.is_finite() {
        Ok(())
    } else {
        Err(MetricError::InvalidParameter(format!("margin must be positive, got {margin}")))
    }
}

/// Easy-positive / hard-negative mining. Ties go to the lowest index.
/// Anchors without a positive or a negative are skipped and reported.
pub fn mine_ep_hn(m: &DMatrix<f64>, labels: &[u64]) -> Result<TripletSelection, MetricError> {
    check_inputs(m, labels)?;
    let n = labels.len();
    let mut selection = TripletSelection::default();
    for a in 0..n {
        let mut positive: Option<usize> = None;
        let mut negative: Option<usize> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let slot = if labels[j] == labels[a] { &mut positive } else { &mut negative };
            match slot {
                Some(best) if m[(a, j)] >= m[(a, *best)] => {}
                _ => *slot = Some(j),
            }
        }
        match (positive, negative) {
            (Some(positive), Some(negative)) => {
                selection.triplets.push(MinedTriplet { anchor: a, positive, negative })
            }
            (None, _) => selection.skipped.push((a, SkipReason::NoPositive)),
            (_, None) => selection.skipped.push((a, SkipReason::NoNegative)),
        }
    }
    Ok(selection)
}

/// Loss value with its gradient with respect to the distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceLoss {
    pub loss: f64,
    /// Triplets (or mined anchors) with a strictly positive hinge.
    pub active_triplet_count: usize,
    /// Triplets (or mined anchors) the loss was evaluated over.
    pub valid_triplet_count: usize,
    pub grad_distances: DMatrix<f64>,
}

/// Mean hinge over every valid triplet whose hinge is positive.
///
/// Valid triplets are `(a, p, n)` with `label(a) = label(p)`, `a ≠ p`,
/// `label(n) ≠ label(a)`.
pub fn batch_all_loss(m: &DMatrix<f64>, labels: &[u64], margin: f64) -> Result<DistanceLoss, MetricError> {
    check_inputs(m, labels)?;
    check_margin(margin)?;
    let n = labels.len();
    let mut sum = 0.0;
    let mut valid = 0usize;
    let mut active: Vec<(usize, usize, usize)> = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for q in 0..n {
                if labels[q] == labels[a] {
                    continue;
                }
                valid += 1;
                let hinge = m[(a, p)] - m[(a, q)] + margin;
                if hinge > 0.0 {
                    sum += hinge;
                    active.push((a, p, q));
                }
            }
        }
    }
    if valid == 0 {
        return Err(MetricError::NoValidTriplet);
    }
    let mut grad = DMatrix::zeros(n, n);
    let loss = if active.is_empty() {
        0.0
    } else {
        let scale = 1.0 / active.len() as f64;
        for &(a, p, q) in &active {
            grad[(a, p)] += scale;
            grad[(a, q)] -= scale;
        }
        sum * scale
    };
    Ok(DistanceLoss {
        loss,
        active_triplet_count: active.len(),
        valid_triplet_count: valid,
        grad_distances: grad,
    })
}

/// Mean over mined anchors of `max(0, M[a][p*] − M[a][n*] + margin)`.
pub fn easy_positive_loss(m: &DMatrix<f64>, labels: &[u64], margin: f64) -> Result<DistanceLoss, MetricError> {
    check_margin(margin)?;
    let selection = mine_ep_hn(m, labels)?;
    if selection.triplets.is_empty() {
        return Err(MetricError::NoValidTriplet);
    }
    let n = labels.len();
    let scale = 1.0 / selection.triplets.len() as f64;
    let mut grad = DMatrix::zeros(n, n);
    let mut sum = 0.0;
    let mut active = 0;
    for t in &selection.triplets {
        let hinge = m[(t.anchor, t.positive)] - m[(t.anchor, t.negative)] + margin;
        if hinge > 0.0 {
            sum += hinge;
            active += 1;
            grad[(t.anchor, t.positive)] += scale;
            grad[(t.anchor, t.negative)] -= scale;
        }
    }
    Ok(DistanceLoss {
        loss: sum * scale,
        active_triplet_count: active,
        valid_triplet_count: selection.triplets.len(),
        grad_distances: grad,
    })
}

/// Soft easy-positive variant: mean over mined anchors of
/// `−log σ((s_ap − s_an) / temperature)` with `s = 1 − M/2`.
///
/// Never exactly zero, so every mined anchor counts as active.
pub fn easy_positive_soft_loss(
    m: &DMatrix<f64>,
    labels: &[u64],
    temperature: f64,
) -> Result<DistanceLoss, MetricError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(MetricError::InvalidParameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let selection = mine_ep_hn(m, labels)?;
    if selection.triplets.is_empty() {
        return Err(MetricError::NoValidTriplet);
    }
    let n = labels.len();
    let scale = 1.0 / selection.triplets.len() as f64;
    let mut grad = DMatrix::zeros(n, n);
    let mut sum = 0.0;
    for t in &selection.triplets {
        // (s_ap − s_an) / T = (M_an − M_ap) / (2T)
        let gap = (m[(t.anchor, t.negative)] - m[(t.anchor, t.positive)]) / (2.0 * temperature);
        sum += softplus(-gap);
        let slope = sigmoid(-gap) / (2.0 * temperature) * scale;
        grad[(t.anchor, t.positive)] += slope;
        grad[(t.anchor, t.negative)] -= slope;
    }
    Ok(DistanceLoss {
        loss: sum * scale,
        active_triplet_count: selection.triplets.len(),
        valid_triplet_count: selection.triplets.len(),
        grad_distances: grad,
    })
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
