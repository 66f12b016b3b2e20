//! Optimization, evaluation metrics, ablation runs and checkpoints.

pub mod adam;
pub mod ablation;
pub mod baseline;
pub mod checkpoint;
pub mod metrics;
mod trainer;

pub use adam::Adam;
pub use baseline::BowLogistic;
pub use metrics::{auc, compute_metrics, roc_curve, spauc, Confusion, MetricsReport};
pub use trainer::{
    accuracy, batch_gradient, evaluate, predict_scores, train_loop, EarlyStopping, EpochRecord, History,
    TrainOptions, TrainOutcome,
};

use crate::config::ConfigError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: u64 },
}
