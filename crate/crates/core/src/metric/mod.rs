//! Metric-learning lab: triplet losses with easy-positive or batch-all
//! triplet selection, a linear embedder trained by gradient descent, and
//! recall@K evaluation.
//!
//! Distances are squared Euclidean on L2-normalized embeddings, so
//! `d² = 2 − 2·cos` and training agrees with cosine retrieval ranking.

mod data;
mod lab;
mod loss;
mod recall;
mod train;

use thiserror::Error;

pub use data::{generate_multimodal_dataset, LabeledBatch, MultimodalShape};
pub use lab::{run_experiment, BatchComposition, DatasetConfig, ExperimentConfig, ExperimentResult, LossRun};
pub use loss::{
    batch_all_loss, easy_positive_loss, easy_positive_soft_loss, mine_ep_hn, pairwise_sq_distances,
    DistanceLoss, MinedTriplet, SkipReason, TripletSelection,
};
pub use recall::evaluate_recall_at_k;
pub use train::{train_step, LossKind, LossReport, ToyEmbedder, DEFAULT_MARGIN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("row {row} is not unit-norm (norm {norm})")]
    NotNormalized { row: usize, norm: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch of {0} samples is too small, need at least 2")]
    BatchTooSmall(usize),
    #[error("batch contains no valid triplet")]
    NoValidTriplet,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("sample {0} maps to a zero vector and cannot be normalized")]
    DegenerateEmbedding(usize),
    #[error("index is empty")]
    EmptyIndex,
}
