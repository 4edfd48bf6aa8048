//! Fixed-seed training experiments contrasting loss formulations.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{generate_multimodal_dataset, LabeledBatch, MultimodalShape};
use super::recall::evaluate_recall_at_k;
use super::train::{train_step, LossKind, ToyEmbedder, DEFAULT_MARGIN};
use super::MetricError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub classes: usize,
    pub modes_per_class: usize,
    pub samples_per_mode: usize,
    pub input_dim: usize,
    pub noise_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchComposition {
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
}

impl Default for BatchComposition {
    fn default() -> Self {
        Self { classes_per_batch: 8, samples_per_class: 4 }
    }
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

fn default_held_out() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub embed_dim: usize,
    pub losses: Vec<LossKind>,
    #[serde(default = "default_margin")]
    pub margin: f64,
    pub learning_rate: f64,
    pub steps: usize,
    #[serde(default)]
    pub batch: BatchComposition,
    /// Samples of every mode held out for evaluation (the last ones generated).
    #[serde(default = "default_held_out")]
    pub held_out_per_mode: usize,
}

impl ExperimentConfig {
    /// 50 classes × 3 modes × 10 samples with noise 1.5, D = 32, d = 16, 500 steps of
    /// 8 × 4 batches, margin 0.2, learning rate 1e-2, seed 0.
    pub fn standard() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig {
                classes: 50,
                modes_per_class: 3,
                samples_per_mode: 10,
                input_dim: 32,
                noise_scale: 1.5,
            },
            embed_dim: 16,
            losses: vec![LossKind::BatchAll, LossKind::EasyPositive],
            margin: 0.2,
            learning_rate: 1e-2,
            steps: 500,
            batch: BatchComposition::default(),
            held_out_per_mode: 3,
        }
    }

    fn validate(&self) -> Result<(), MetricError> {
        let d = &self.dataset;
        if self.losses.is_empty() {
            return Err(MetricError::InvalidParameter("no loss kinds configured".into()));
        }
        if self.held_out_per_mode >= d.samples_per_mode {
            return Err(MetricError::InvalidParameter(
                "held_out_per_mode must leave at least one training sample per mode".into(),
            ));
        }
        let train_per_class = d.modes_per_class * (d.samples_per_mode - self.held_out_per_mode);
        if self.batch.samples_per_class < 2 || self.batch.samples_per_class > train_per_class {
            return Err(MetricError::InvalidParameter(format!(
                "samples_per_class must be in [2, {train_per_class}]"
            )));
        }
        if self.batch.classes_per_batch < 2 || self.batch.classes_per_batch > d.classes {
            return Err(MetricError::InvalidParameter(format!(
                "classes_per_batch must be in [2, {}]",
                d.classes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRun {
    pub loss: String,
    /// Batch loss before each step.
    pub loss_curve: Vec<f64>,
    pub initial_held_out_recall_at_1: f64,
    pub final_train_recall_at_1: f64,
    pub final_held_out_recall_at_1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub chance_recall_at_1: f64,
    pub train_samples: usize,
    pub held_out_samples: usize,
    pub runs: Vec<LossRun>,
}

impl ExperimentResult {
    pub fn run(&self, loss: &str) -> Option<&LossRun> {
        self.runs.iter().find(|r| r.loss == loss)
    }
}

/// Train/held-out split: within every mode the last `held_out_per_mode`
/// samples are held out.
fn split(data: &LabeledBatch, cfg: &ExperimentConfig) -> Result<(LabeledBatch, LabeledBatch), MetricError> {
    let per_mode = cfg.dataset.samples_per_mode;
    let keep = per_mode - cfg.held_out_per_mode;
    let (train, held): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|i| i % per_mode < keep);
    Ok((data.select(&train)?, data.select(&held)?))
}

/// Sequence of batch row sets drawn from `train`, shared by all losses.
fn batch_plan(train: &LabeledBatch, cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut by_class: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &label) in train.labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    let classes: Vec<u64> = by_class.keys().copied().collect();
    (0..cfg.steps)
        .map(|_| {
            let mut rows = Vec::with_capacity(cfg.batch.classes_per_batch * cfg.batch.samples_per_class);
            for class in classes.choose_multiple(rng, cfg.batch.classes_per_batch) {
                let mut members = by_class[class].clone();
                members.shuffle(rng);
                rows.extend_from_slice(&members[..cfg.batch.samples_per_class]);
            }
            rows
        })
        .collect()
}

fn recall_at_1(model: &ToyEmbedder, index: &LabeledBatch, queries: Option<&LabeledBatch>) -> Result<f64, MetricError> {
    let index_e = model.embed(&index.inputs)?;
    match queries {
        None => evaluate_recall_at_k(&index_e, &index.labels, &index_e, &index.labels, 1, true),
        Some(q) => {
            let query_e = model.embed(&q.inputs)?;
            evaluate_recall_at_k(&index_e, &index.labels, &query_e, &q.labels, 1, false)
        }
    }
}

/// Trains one embedder per configured loss from the same initialization on
/// the same batch sequence and reports loss curves and recall@1.
///
/// Held-out recall queries the held-out samples against the training set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, MetricError> {
    cfg.validate()?;
    let d = &cfg.dataset;
    let data = generate_multimodal_dataset(
        cfg.seed,
        MultimodalShape {
            classes: d.classes,
            modes_per_class: d.modes_per_class,
            samples_per_mode: d.samples_per_mode,
            input_dim: d.input_dim,
            noise_scale: d.noise_scale,
        },
    )?;
    let (train, held_out) = split(&data, cfg)?;
    let init = ToyEmbedder::random(cfg.seed.wrapping_add(1), cfg.embed_dim, d.input_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let plan = batch_plan(&train, cfg, &mut rng);
    let initial_held_out = recall_at_1(&init, &train, Some(&held_out))?;

    let mut runs = Vec::with_capacity(cfg.losses.len());
    for &kind in &cfg.losses {
        let mut model = init.clone();
        let mut curve = Vec::with_capacity(cfg.steps);
        for rows in &plan {
            let batch = train.select(rows)?;
            let (next, report) = train_step(&model, &batch, kind, cfg.margin, cfg.learning_rate)?;
            curve.push(report.loss);
            model = next;
        }
        runs.push(LossRun {
            loss: kind.name().to_string(),
            loss_curve: curve,
            initial_held_out_recall_at_1: initial_held_out,
            final_train_recall_at_1: recall_at_1(&model, &train, None)?,
            final_held_out_recall_at_1: recall_at_1(&model, &train, Some(&held_out))?,
        });
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        chance_recall_at_1: 1.0 / d.classes as f64,
        train_samples: train.len(),
        held_out_samples: held_out.len(),
        runs,
    })
}
