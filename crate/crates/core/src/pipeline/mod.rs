//! Losses, softmax aggregation, training loops and the three selection
//! methods (differentiable, single-path one-shot, grid).

mod data;
mod loss;
mod metrics;
mod search;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::datagen::DataError;
use crate::models::ModelError;

pub use data::{Batch, Prepared};
pub use loss::{aggregate, loss_task1, loss_task2, softmax_values, TASK1_SCALE};
pub use metrics::{argmax_first, argmin_first, auc, median};
pub use search::{
    combined_loss_darts, combined_loss_spos, darts_search, evaluate_pair, exhaustive_combo_search, grid_search,
    post_train, predict_task1, pretrain, run_darts, run_spos, sample_path, select_argmax, spos_search, Candidates,
    GridResult, Method, PairMetrics, Pretrained, RunOutcome, SelectedCombo, Splits, Supernet,
};
pub use train::{evaluate, fit, AlphaRecord, EarlyStopping, EpochStat, StopReason, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("task2 target {0} is not 0 or 1")]
    InvalidTarget(f64),
    #[error("invalid selection config: {0}")]
    Config(String),
    #[error("{0}")]
    Metric(String),
    #[error("non-finite training loss: {0}")]
    NonFiniteLoss(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl PipelineError {
    pub fn context(self, context: impl Into<String>) -> Self {
        PipelineError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

/// Hyperparameters of one selection run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Task1 weight; the Task2 weight is `1 − v1`.
    pub v1: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Pre- and post-training patience.
    pub patience_train: usize,
    /// Architecture-search patience.
    pub patience_search: usize,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            v1: 0.0,
            epsilon: 1.0,
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 100,
            patience_train: 10,
            patience_search: 20,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn new(v1: f64, seed: u64) -> Result<Self, PipelineError> {
        let cfg = Self {
            v1,
            seed,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(0.0..=1.0).contains(&self.v1) {
            return bad(format!("v1 = {} outside [0, 1]", self.v1));
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon = {} must be non-negative", self.epsilon));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return bad("learning rate and batch size must be positive".into());
        }
        if self.max_epochs == 0 || self.patience_train >= self.max_epochs || self.patience_search >= self.max_epochs {
            return bad(format!(
                "patience ({}, {}) must be below max epochs {}",
                self.patience_train, self.patience_search, self.max_epochs
            ));
        }
        Ok(())
    }

    /// Task weights `(v1, v2)`, summing to one.
    pub fn v(&self) -> [f64; 2] {
        [self.v1, 1.0 - self.v1]
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience_train,
        }
    }

    pub fn search_config(&self) -> TrainConfig {
        TrainConfig {
            patience: self.patience_search,
            ..self.train_config()
        }
    }
}
