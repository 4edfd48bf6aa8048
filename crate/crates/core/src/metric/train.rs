//! Linear embedder with L2-normalized outputs and its gradient step.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::LabeledBatch;
use super::loss::{batch_all_loss, easy_positive_loss, easy_positive_soft_loss, pairwise_sq_distances, DistanceLoss};
use super::MetricError;

pub const DEFAULT_MARGIN: f64 = 0.2;
const MIN_OUTPUT_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BatchAll,
    EasyPositive,
    /// Non-default smooth variant; see [`easy_positive_soft_loss`].
    EasyPositiveSoft { temperature: f64 },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::BatchAll => "batch_all",
            LossKind::EasyPositive => "easy_positive",
            LossKind::EasyPositiveSoft { .. } => "easy_positive_soft",
        }
    }

    pub fn evaluate(&self, m: &DMatrix<f64>, labels: &[u64], margin: f64) -> Result<DistanceLoss, MetricError> {
        match *self {
            LossKind::BatchAll => batch_all_loss(m, labels, margin),
            LossKind::EasyPositive => easy_positive_loss(m, labels, margin),
            LossKind::EasyPositiveSoft { temperature } => easy_positive_soft_loss(m, labels, temperature),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub active_triplet_count: usize,
    /// `∂loss/∂weight`, same shape as the embedder weight.
    pub gradient: DMatrix<f64>,
}

/// `x ↦ Wx / ‖Wx‖`, a stand-in for a deep backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEmbedder {
    weight: DMatrix<f64>,
}

impl ToyEmbedder {
    /// `weight` is `d × D` with `d ≥ 2`.
    pub fn new(weight: DMatrix<f64>) -> Result<Self, MetricError> {
        if weight.nrows() < 2 || weight.ncols() == 0 {
            return Err(MetricError::InvalidParameter(format!(
                "embedder weight must be at least 2x1, got {}x{}",
                weight.nrows(),
                weight.ncols()
            )));
        }
        if weight.iter().any(|w| !w.is_finite()) {
            return Err(MetricError::NonFinite("embedder weight"));
        }
        Ok(Self { weight })
    }

    /// Entries drawn from N(0, 1/(d·D)), so the weight has unit expected
    /// Frobenius norm.
    ///
    /// The output is normalized, so the loss ignores the weight's scale but
    /// the gradient shrinks as 1/‖W‖. The init scale therefore sets how far
    /// a step of a given learning rate moves the embedding.
    pub fn random(seed: u64, embed_dim: usize, input_dim: usize) -> Result<Self, MetricError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / ((embed_dim * input_dim).max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        Self::new(DMatrix::from_fn(embed_dim, input_dim, |_, _| normal.sample(&mut rng)))
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    /// Row-wise normalized embeddings of `inputs` (N × D) → N × d.
    pub fn embed(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricError> {
        Ok(self.forward(inputs)?.0)
    }

    fn forward(&self, inputs: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>), MetricError> {
        if inputs.ncols() != self.input_dim() {
            return Err(MetricError::ShapeMismatch(format!(
                "inputs have {} columns, embedder expects {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        let mut z = inputs * self.weight.transpose();
        let mut norms = Vec::with_capacity(z.nrows());
        for (i, mut row) in z.row_iter_mut().enumerate() {
            let norm = row.norm();
            if !(norm > MIN_OUTPUT_NORM) {
                return Err(MetricError::DegenerateEmbedding(i));
            }
            row /= norm;
            norms.push(norm);
        }
        Ok((z, norms))
    }

    /// Loss of `kind` on `batch` and its gradient with respect to the weight.
    pub fn loss_report(&self, batch: &LabeledBatch, kind: LossKind, margin: f64) -> Result<LossReport, MetricError> {
        let (e, norms) = self.forward(&batch.inputs)?;
        let m = pairwise_sq_distances(&e)?;
        let dl = kind.evaluate(&m, &batch.labels, margin)?;

        // M = 2 − 2·E Eᵀ  ⇒  ∂L/∂E = −2 (G + Gᵀ) E
        let g = &dl.grad_distances;
        let grad_e = (g + g.transpose()) * &e * -2.0;
        // e = z/‖z‖  ⇒  ∂L/∂z = (∂L/∂e − e (e·∂L/∂e)) / ‖z‖
        let mut grad_z = grad_e;
        for (i, mut row) in grad_z.row_iter_mut().enumerate() {
            let ei = e.row(i);
            let radial = ei.dot(&row);
            row -= ei * radial;
            row /= norms[i];
        }
        // z = W x  ⇒  ∂L/∂W = (∂L/∂Z)ᵀ X
        let gradient = grad_z.transpose() * &batch.inputs;
        if gradient.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite("gradient"));
        }
        Ok(LossReport { loss: dl.loss, active_triplet_count: dl.active_triplet_count, gradient })
    }

    /// Loss value only.
    pub fn loss(&self, batch: &LabeledBatch, kind: LossKind, margin: f64) -> Result<f64, MetricError> {
        let e = self.embed(&batch.inputs)?;
        let m = pairwise_sq_distances(&e)?;
        Ok(kind.evaluate(&m, &batch.labels, margin)?.loss)
    }
}

/// One gradient-descent step: `W ← W − η ∂L/∂W`.
///
/// The report describes the loss before the update. A step with no active
/// triplet leaves the weight bitwise unchanged.
pub fn train_step(
    model: &ToyEmbedder,
    batch: &LabeledBatch,
    kind: LossKind,
    margin: f64,
    learning_rate: f64,
) -> Result<(ToyEmbedder, LossReport), MetricError> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(MetricError::InvalidParameter(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    let report = model.loss_report(batch, kind, margin)?;
    if report.active_triplet_count == 0 {
        return Ok((model.clone(), report));
    }
    let weight = &model.weight - &report.gradient * learning_rate;
    Ok((ToyEmbedder::new(weight)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_instance(seed: u64) -> (ToyEmbedder, LabeledBatch) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let inputs = DMatrix::from_fn(8, 4, |_, _| normal.sample(&mut rng));
        // three classes with at least two samples each
        let mut labels: Vec<u64> = vec![0, 0, 1, 1, 2, 2];
        labels.push(rng.random_range(0..3));
        labels.push(rng.random_range(0..3));
        let model = ToyEmbedder::random(seed ^ 0x5eed, 3, 4).unwrap();
        (model, LabeledBatch::new(inputs, labels).unwrap())
    }

    /// Central finite differences of the loss value in every weight entry.
    fn finite_difference(model: &ToyEmbedder, batch: &LabeledBatch, kind: LossKind, margin: f64) -> DMatrix<f64> {
        let h = 1e-5;
        let w = model.weight().clone();
        DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| {
            let mut plus = w.clone();
            plus[(i, j)] += h;
            let mut minus = w.clone();
            minus[(i, j)] -= h;
            let lp = ToyEmbedder::new(plus).unwrap().loss(batch, kind, margin).unwrap();
            let lm = ToyEmbedder::new(minus).unwrap().loss(batch, kind, margin).unwrap();
            (lp - lm) / (2.0 * h)
        })
    }

    fn max_relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
        analytic
            .iter()
            .zip(numeric.iter())
            .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in [LossKind::BatchAll, LossKind::EasyPositive, LossKind::EasyPositiveSoft { temperature: 0.3 }] {
            let mut checked = 0;
            for seed in 0..40 {
                let (model, batch) = random_instance(seed);
                let report = model.loss_report(&batch, kind, 0.5).unwrap();
                if report.active_triplet_count == 0 {
                    continue;
                }
                let numeric = finite_difference(&model, &batch, kind, 0.5);
                let err = max_relative_error(&report.gradient, &numeric);
                assert!(err < 1e-4, "{kind:?} seed {seed}: max relative error {err:e}");
                checked += 1;
            }
            assert!(checked >= 20, "{kind:?}: only {checked} instances had active triplets");
        }
    }

    #[test]
    fn zero_loss_step_leaves_weights_bitwise() {
        // two well separated classes embedded by the identity map
        let inputs = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.01, 0.0, 1.0, 0.01, 1.0]);
        let batch = LabeledBatch::new(inputs, vec![0, 0, 1, 1]).unwrap();
        let model = ToyEmbedder::new(DMatrix::identity(2, 2)).unwrap();
        for kind in [LossKind::BatchAll, LossKind::EasyPositive] {
            let (next, report) = train_step(&model, &batch, kind, 0.2, 1e-2).unwrap();
            assert_eq!(report.loss, 0.0);
            let before: Vec<u64> = model.weight().iter().map(|v| v.to_bits()).collect();
            let after: Vec<u64> = next.weight().iter().map(|v| v.to_bits()).collect();
            assert_eq!(before, after);
        }
    }

    #[test]
    fn one_step_decreases_loss() {
        for kind in [LossKind::BatchAll, LossKind::EasyPositive] {
            let (model, batch) = random_instance(7);
            let (next, report) = train_step(&model, &batch, kind, DEFAULT_MARGIN, 1e-2).unwrap();
            assert!(report.loss > 0.0);
            let after = next.loss(&batch, kind, DEFAULT_MARGIN).unwrap();
            assert!(after < report.loss, "{kind:?}: {after} !< {}", report.loss);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (model, batch) = random_instance(3);
        let a = train_step(&model, &batch, LossKind::EasyPositive, 0.2, 1e-2).unwrap();
        let b = train_step(&model, &batch, LossKind::EasyPositive, 0.2, 1e-2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parameter_validation() {
        let (model, batch) = random_instance(1);
        assert!(train_step(&model, &batch, LossKind::BatchAll, 0.2, 0.0).is_err());
        assert!(ToyEmbedder::new(DMatrix::zeros(1, 4)).is_err());
        assert!(ToyEmbedder::new(DMatrix::from_element(2, 2, f64::NAN)).is_err());
        let zero = ToyEmbedder::new(DMatrix::zeros(2, 4)).unwrap();
        assert!(matches!(zero.embed(&batch.inputs), Err(MetricError::DegenerateEmbedding(0))));
    }

    #[test]
    fn embeddings_are_unit_rows() {
        let (model, batch) = random_instance(11);
        let e = model.embed(&batch.inputs).unwrap();
        for row in e.row_iter() {
            assert!((row.norm() - 1.0).abs() < 1e-12);
        }
    }
}
