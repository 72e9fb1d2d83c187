//! Training loop, evaluation metrics and the comparison experiments.

mod eval;
mod experiments;
mod train;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetError;
use crate::model::ModelError;

pub use eval::{
    evaluate, metrics_csv, relative_l2, DecodeIntegrate, EvalConfig, MetricsReport, Outcome, OutcomeCounts, Predictor,
    SampleMetrics, SymbolMetrics,
};
pub use experiments::{ablation_csv, input_length_ablation, ood_csv, ood_sweep, AblationRow, OodRow};
pub use train::{loss_curve_csv, train, train_with, EpochLog, StepLog, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("empty {0} set")]
    EmptyDataset(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss or gradient at step {step}; parameters restored to the best epoch")]
    NonFiniteLoss { step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the relative squared data loss.
    pub alpha: f64,
    /// Weight of the symbol cross-entropy.
    pub beta: f64,
    pub lr: f64,
    pub weight_decay: f64,
    /// Share of all steps spent in linear warm-up.
    pub warmup_fraction: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Batches per epoch; `None` means one pass over the training set.
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn full_scale() -> Self {
        Self {
            alpha: 6.0,
            beta: 1.0,
            lr: 1e-4,
            weight_decay: 1e-4,
            warmup_fraction: 0.1,
            clip_norm: 1.0,
            batch_size: 512,
            epochs: 80,
            steps_per_epoch: Some(2000),
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 16,
            epochs: 10,
            steps_per_epoch: None,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return bad("loss weights must be non-negative and not both zero");
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0 && self.clip_norm > 0.0) {
            return bad("lr, weight decay and clip norm");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup fraction outside [0, 1]");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.steps_per_epoch == Some(0) {
            return bad("batch size, epochs and steps per epoch must be positive");
        }
        Ok(())
    }
}
