//! Labeled sample batches and the synthetic multimodal class generator.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::MetricError;

/// N raw descriptors (rows of `inputs`) with one class label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub inputs: DMatrix<f64>,
    pub labels: Vec<u64>,
}

impl LabeledBatch {
    pub fn new(inputs: DMatrix<f64>, labels: Vec<u64>) -> Result<Self, MetricError> {
        if inputs.nrows() != labels.len() {
            return Err(MetricError::ShapeMismatch(format!(
                "{} input rows vs {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if labels.len() < 2 {
            return Err(MetricError::BatchTooSmall(labels.len()));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite("batch inputs"));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sub-batch of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self, MetricError> {
        let inputs = self.inputs.select_rows(rows);
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        Self::new(inputs, labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultimodalShape {
    pub classes: usize,
    pub modes_per_class: usize,
    pub samples_per_mode: usize,
    pub input_dim: usize,
    pub noise_scale: f64,
}

/// Standard deviation of mode offsets relative to class means. Above 1, two
/// modes of one class sit further apart than two class means typically do.
pub const MODE_OFFSET_SCALE: f64 = 2.0;

/// Classes whose samples fall into several distinct modes, like rooms of
/// one hotel that look nothing alike.
///
/// Per class a mean is drawn from N(0, I); per mode an offset from
/// N(0, MODE_OFFSET_SCALE² I); each sample is
/// `mean + offset + noise_scale · N(0, I)`. Rows are ordered class-major,
/// then mode, then sample; the label is the class index.
pub fn generate_multimodal_dataset(seed: u64, shape: MultimodalShape) -> Result<LabeledBatch, MetricError> {
    let MultimodalShape { classes, modes_per_class, samples_per_mode, input_dim, noise_scale } = shape;
    if classes == 0 || modes_per_class == 0 || samples_per_mode == 0 || input_dim == 0 {
        return Err(MetricError::InvalidParameter("dataset counts must be at least 1".into()));
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(MetricError::InvalidParameter(format!("noise scale {noise_scale} must be >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..input_dim).map(|_| StandardNormal.sample(rng)).collect()
    };
    let n = classes * modes_per_class * samples_per_mode;
    let mut data = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..classes {
        let mean = draw(&mut rng);
        for _ in 0..modes_per_class {
            let offset: Vec<f64> = draw(&mut rng).into_iter().map(|x| MODE_OFFSET_SCALE * x).collect();
            for _ in 0..samples_per_mode {
                let noise = draw(&mut rng);
                data.extend((0..input_dim).map(|k| mean[k] + offset[k] + noise_scale * noise[k]));
                labels.push(class as u64);
            }
        }
    }
    LabeledBatch::new(DMatrix::from_row_slice(n, input_dim, &data), labels)
}
