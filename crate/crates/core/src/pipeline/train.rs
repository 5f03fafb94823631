use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph, ParamId, ParamStore, Var};

use super::data::{Batch, Prepared};
use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Stops once the validation loss has not improved for `patience` epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records one epoch; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    /// Nothing to train; the validation loss was evaluated once.
    NoParameters,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub epoch: usize,
    pub task: usize,
    pub candidate: String,
    pub alpha: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStat>,
    pub stop_epoch: usize,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Per-epoch architecture weights; search phases only.
    pub alpha_trajectory: Option<Vec<AlphaRecord>>,
    pub wall_time_s: f64,
}

pub(crate) type LossFn<'a> =
    dyn FnMut(&Graph<f32>, &ParamStore<f32>, &Batch<f32>, &mut ChaCha8Rng) -> Result<Var, PipelineError> + 'a;

/// Every parameter of `store` outside `group`.
pub(crate) fn complement(store: &ParamStore<f32>, group: &[ParamId]) -> Vec<ParamId> {
    let keep: HashSet<ParamId> = group.iter().copied().collect();
    store.ids().filter(|id| !keep.contains(id)).collect()
}

/// Event-weighted mean loss over `data` with all parameters frozen.
pub fn evaluate(
    store: &ParamStore<f32>,
    data: &Prepared,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    loss: &mut LossFn<'_>,
) -> Result<f64, PipelineError> {
    let order: Vec<usize> = (0..data.len()).collect();
    let (mut total, mut count) = (0.0, 0usize);
    for idx in data.batches(&order, batch_size) {
        let batch = data.batch::<f32>(idx);
        let g = Graph::inference();
        let l = loss(&g, store, &batch, rng)?;
        total += g.scalar(l) as f64 * idx.len() as f64;
        count += idx.len();
    }
    if count == 0 {
        return Err(PipelineError::Config("evaluation on an empty split".into()));
    }
    Ok(total / count as f64)
}

/// One gradient step on `group` from the loss of `batch`; returns the loss.
pub(crate) fn step(
    store: &mut ParamStore<f32>,
    frozen: &[ParamId],
    adam: &mut Adam<f32>,
    batch: &Batch<f32>,
    rng: &mut ChaCha8Rng,
    loss: &mut LossFn<'_>,
) -> Result<f64, PipelineError> {
    let g = Graph::new();
    g.freeze(frozen.iter().copied());
    let l = loss(&g, store, batch, rng)?;
    let value = g.scalar(l) as f64;
    if !value.is_finite() {
        return Err(PipelineError::NonFiniteLoss(format!("loss {value}")));
    }
    let grads = g.gradients(l)?;
    drop(g);
    adam.step(store, &grads)?;
    Ok(value)
}

/// Mini-batch Adam on the parameters in `group`, early stopping on the
/// validation loss and restoring the best weights at the end.
pub fn fit(
    store: &mut ParamStore<f32>,
    group: &[ParamId],
    train: &Prepared,
    val: &Prepared,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    loss: &mut LossFn<'_>,
) -> Result<TrainReport, PipelineError> {
    let start = Instant::now();
    if group.is_empty() {
        let v = evaluate(store, val, cfg.batch_size, rng, loss)?;
        return Ok(TrainReport {
            epochs: Vec::new(),
            stop_epoch: 0,
            stop_reason: StopReason::NoParameters,
            best_epoch: 0,
            best_val_loss: v,
            alpha_trajectory: None,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    let frozen = complement(store, group);
    let mut adam = Adam::new(cfg.adam(), group.to_vec());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = store.snapshot(group);
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut reason = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(rng);
        let (mut total, mut count) = (0.0, 0usize);
        for idx in train.batches(&order, cfg.batch_size) {
            let batch = train.batch::<f32>(idx);
            let l = step(store, &frozen, &mut adam, &batch, rng, loss)
                .map_err(|e| e.context(format!("epoch {epoch}")))?;
            total += l * idx.len() as f64;
            count += idx.len();
        }
        let val_loss = evaluate(store, val, cfg.batch_size, rng, loss)?;
        epochs.push(EpochStat {
            epoch,
            train_loss: total / count.max(1) as f64,
            val_loss,
        });
        if stopper.observe(epoch, val_loss) {
            best = store.snapshot(group);
        }
        if stopper.should_stop() {
            reason = StopReason::Patience;
            break;
        }
    }
    store.restore(group, &best);
    Ok(TrainReport {
        stop_epoch: epochs.len(),
        epochs,
        stop_reason: reason,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        alpha_trajectory: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
