use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::datagen::{DataError, Dataset, Split};
use crate::models::{Model, ModelKind, ModelSpec, Task, Task1Input};
use crate::seed::derived_rng;

use super::data::{Batch, Prepared};
use super::loss::{aggregate, loss_task1, loss_task2};
use super::metrics::{argmax_first, auc};
use super::train::{complement, evaluate, fit, step, AlphaRecord, EarlyStopping, EpochStat, StopReason, TrainReport};
use super::{PipelineError, SelectionConfig};

/// Train/validation/test splits in model layout.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Prepared,
    pub val: Prepared,
    pub test: Prepared,
}

impl Splits {
    pub fn from_dataset(ds: &Dataset) -> Result<Self, DataError> {
        Ok(Self {
            train: Prepared::from_dataset(ds, Split::Train)?,
            val: Prepared::from_dataset(ds, Split::Val)?,
            test: Prepared::from_dataset(ds, Split::Test)?,
        })
    }
}

/// Candidate models of both tasks, all registered in one parameter store.
#[derive(Debug, Clone)]
pub struct Candidates {
    pub task1: Vec<Model>,
    pub task2: Vec<Model>,
}

impl Candidates {
    pub fn build(store: &mut ParamStore<f32>, specs: &[ModelSpec]) -> Result<Self, PipelineError> {
        let (mut task1, mut task2) = (Vec::new(), Vec::new());
        for &spec in specs {
            let model = Model::build(spec, store)?;
            match spec.task {
                Task::Task1 => task1.push(model),
                Task::Task2 => task2.push(model),
            }
        }
        if task1.is_empty() || task2.is_empty() {
            return Err(PipelineError::Config("each task needs at least one candidate".into()));
        }
        Ok(Self { task1, task2 })
    }

    /// The three learned candidates per task, `replicas` times each, plus
    /// one Zeros and one Noise per task when `dummies` is set.
    pub fn standard(store: &mut ParamStore<f32>, run_seed: u64, replicas: usize, dummies: bool) -> Result<Self, PipelineError> {
        let mut specs = Vec::new();
        for (task, kinds) in [(Task::Task1, ModelKind::TASK1), (Task::Task2, ModelKind::TASK2)] {
            let base: Vec<ModelSpec> = kinds
                .iter()
                .map(|&k| ModelSpec::new(task, k, 0, run_seed))
                .collect::<Result<_, _>>()?;
            specs.extend(crate::models::replicate_models(&base, replicas, run_seed)?);
            if dummies {
                for k in ModelKind::DUMMIES {
                    specs.push(ModelSpec::new(task, k, 0, run_seed)?);
                }
            }
        }
        Self::build(store, &specs)
    }

    pub fn without_dummies(&self) -> Self {
        let keep = |v: &[Model]| v.iter().filter(|m| !m.kind().is_dummy()).cloned().collect();
        Self {
            task1: keep(&self.task1),
            task2: keep(&self.task2),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.task1
            .iter()
            .chain(&self.task2)
            .flat_map(|m| m.params().iter().copied())
            .collect()
    }

    pub fn ids(&self, task: Task) -> Vec<String> {
        let v = match task {
            Task::Task1 => &self.task1,
            Task::Task2 => &self.task2,
        };
        v.iter().map(Model::id).collect()
    }
}

/// All candidates plus one architecture weight per candidate and task.
#[derive(Debug, Clone)]
pub struct Supernet {
    pub candidates: Candidates,
    pub alpha: [ParamId; 2],
}

impl Supernet {
    /// Registers zero-initialised architecture weights.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, candidates: Candidates) -> Result<Self, PipelineError> {
        let a1 = store.add("alpha.task1", Tensor::zeros(vec![candidates.task1.len()]))?;
        let a2 = store.add("alpha.task2", Tensor::zeros(vec![candidates.task2.len()]))?;
        Ok(Self {
            candidates,
            alpha: [a1, a2],
        })
    }

    pub fn alphas<T: Scalar>(&self, store: &ParamStore<T>) -> [Vec<f64>; 2] {
        self.alpha
            .map(|id| store.get(id).data().iter().map(|v| v.as_f64()).collect())
    }

    pub fn weight_params(&self) -> Vec<ParamId> {
        self.candidates.params()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Darts,
    Spos,
    Grid,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Darts => "darts",
            Method::Spos => "spos",
            Method::Grid => "grid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedCombo {
    pub method: Method,
    pub task1: usize,
    pub task2: usize,
    pub task1_id: String,
    pub task2_id: String,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    /// Task1 loss (scaled squared error) of the pair's calibration output.
    pub mse_t1: f64,
    pub auc_t2: f64,
}

fn task1_input<T: Scalar>(g: &Graph<T>, batch: &Batch<T>) -> Task1Input {
    Task1Input {
        jets: g.constant(batch.jets.clone()),
        images: g.constant(batch.images.clone()),
    }
}

fn accumulate<T: Scalar>(g: &Graph<T>, acc: Option<Var>, term: Var, weight: f64) -> Result<Option<Var>, PipelineError> {
    let term = g.scale(term, T::from_f64(weight))?;
    Ok(Some(match acc {
        None => term,
        Some(a) => g.add(a, term)?,
    }))
}

/// `Σ_t v_t·(L_t(aggregated) + ε·Σ_j L_t(candidate j))`. Task2 candidates
/// consume the aggregated Task1 output. Tasks with zero weight are skipped.
pub fn combined_loss_darts<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    net: &Supernet,
    batch: &Batch<T>,
    v: [f64; 2],
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Var, PipelineError> {
    let input = task1_input(g, batch);
    let y1 = net
        .candidates
        .task1
        .iter()
        .map(|m| m.forward_task1(g, store, input, rng))
        .collect::<Result<Vec<_>, _>>()?;
    let agg1 = aggregate(g, &y1, g.param(store, net.alpha[0]))?;
    let mut total = None;
    if v[0] > 0.0 {
        let truth = g.constant(batch.truth.clone());
        total = accumulate(g, total, loss_task1(g, agg1, truth)?, v[0])?;
        if epsilon > 0.0 {
            for &y in &y1 {
                total = accumulate(g, total, loss_task1(g, y, truth)?, v[0] * epsilon)?;
            }
        }
    }
    if v[1] > 0.0 {
        let labels = g.constant(batch.labels.clone());
        let y2 = net
            .candidates
            .task2
            .iter()
            .map(|m| m.forward_task2(g, store, agg1, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let agg2 = aggregate(g, &y2, g.param(store, net.alpha[1]))?;
        total = accumulate(g, total, loss_task2(g, agg2, labels)?, v[1])?;
        if epsilon > 0.0 {
            for &y in &y2 {
                total = accumulate(g, total, loss_task2(g, y, labels)?, v[1] * epsilon)?;
            }
        }
    }
    total.ok_or_else(|| PipelineError::Config("all task weights are zero".into()))
}

/// `v1·L1(y1) + v2·L2(y2)` along one path; Task2 consumes the Task1 output.
pub fn combined_loss_spos<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    t1: &Model,
    t2: &Model,
    batch: &Batch<T>,
    v: [f64; 2],
    rng: &mut ChaCha8Rng,
) -> Result<Var, PipelineError> {
    let y1 = t1.forward_task1(g, store, task1_input(g, batch), rng)?;
    let mut total = None;
    if v[0] > 0.0 {
        let truth = g.constant(batch.truth.clone());
        total = accumulate(g, total, loss_task1(g, y1, truth)?, v[0])?;
    }
    if v[1] > 0.0 {
        let labels = g.constant(batch.labels.clone());
        let y2 = t2.forward_task2(g, store, y1, rng)?;
        total = accumulate(g, total, loss_task2(g, y2, labels)?, v[1])?;
    }
    total.ok_or_else(|| PipelineError::Config("all task weights are zero".into()))
}

/// Indices of the largest architecture weight per task, lowest index on ties.
pub fn select_argmax(alphas: &[Vec<f64>; 2]) -> Result<(usize, usize), PipelineError> {
    let pick = |a: &[f64]| argmax_first(a).ok_or_else(|| PipelineError::Config("empty architecture weights".into()));
    Ok((pick(&alphas[0])?, pick(&alphas[1])?))
}

/// Uniformly sampled `(task1, task2)` candidate indices.
pub fn sample_path(rng: &mut ChaCha8Rng, n1: usize, n2: usize) -> (usize, usize) {
    (rng.gen_range(0..n1), rng.gen_range(0..n2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub task: Task,
    pub model: String,
    pub report: TrainReport,
}

/// Candidates after pre-training, with the store holding their weights.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub store: ParamStore<f32>,
    pub candidates: Candidates,
    pub records: Vec<PretrainRecord>,
}

impl Pretrained {
    /// Longest pre-training run, in epochs.
    pub fn epochs(&self) -> usize {
        self.records.iter().map(|r| r.report.stop_epoch).max().unwrap_or(0)
    }
}

/// Trains every learned candidate on its own task from ground truth:
/// Task1 against the true taus, Task2 on the true taus as input.
pub fn pretrain(
    mut store: ParamStore<f32>,
    candidates: Candidates,
    splits: &Splits,
    cfg: &SelectionConfig,
) -> Result<Pretrained, PipelineError> {
    let tc = cfg.train_config();
    let mut records = Vec::new();
    for m in candidates.task1.iter().filter(|m| !m.params().is_empty()) {
        let mut rng = derived_rng(cfg.seed, &format!("pretrain/t1/{}", m.id()));
        let mut loss = |g: &Graph<f32>, s: &ParamStore<f32>, b: &Batch<f32>, r: &mut ChaCha8Rng| {
            let y = m.forward_task1(g, s, task1_input(g, b), r)?;
            loss_task1(g, y, g.constant(b.truth.clone()))
        };
        let report = fit(&mut store, m.params(), &splits.train, &splits.val, &tc, &mut rng, &mut loss)
            .map_err(|e| e.context(format!("pre-training {}", m.id())))?;
        records.push(PretrainRecord {
            task: Task::Task1,
            model: m.id(),
            report,
        });
    }
    let (train, val) = (splits.train.without_images(), splits.val.without_images());
    for m in candidates.task2.iter().filter(|m| !m.params().is_empty()) {
        let mut rng = derived_rng(cfg.seed, &format!("pretrain/t2/{}", m.id()));
        let mut loss = |g: &Graph<f32>, s: &ParamStore<f32>, b: &Batch<f32>, r: &mut ChaCha8Rng| {
            let y = m.forward_task2(g, s, g.constant(b.truth.clone()), r)?;
            loss_task2(g, y, g.constant(b.labels.clone()))
        };
        let report = fit(&mut store, m.params(), &train, &val, &tc, &mut rng, &mut loss)
            .map_err(|e| e.context(format!("pre-training {}", m.id())))?;
        records.push(PretrainRecord {
            task: Task::Task2,
            model: m.id(),
            report,
        });
    }
    Ok(Pretrained {
        store,
        candidates,
        records,
    })
}

fn alpha_records(net: &Supernet, store: &ParamStore<f32>, epoch: usize) -> Vec<AlphaRecord> {
    let alphas = net.alphas(store);
    let mut out = Vec::new();
    for (t, (a, models)) in alphas.iter().zip([&net.candidates.task1, &net.candidates.task2]).enumerate() {
        let w = super::loss::softmax_values(a);
        for (j, m) in models.iter().enumerate() {
            out.push(AlphaRecord {
                epoch,
                task: t + 1,
                candidate: m.id(),
                alpha: a[j],
                weight: w[j],
            });
        }
    }
    out
}

/// Alternating first-order search: per training mini-batch, one step on the
/// architecture weights from a validation mini-batch, then one step on the
/// model weights. Stops early on the full validation loss and selects the
/// largest architecture weight per task.
pub fn darts_search(
    store: &mut ParamStore<f32>,
    net: &Supernet,
    splits: &Splits,
    cfg: &SelectionConfig,
) -> Result<(SelectedCombo, TrainReport), PipelineError> {
    let start = Instant::now();
    let tc = cfg.search_config();
    let mut rng = derived_rng(cfg.seed, "darts");
    let (v, eps) = (cfg.v(), cfg.epsilon);
    let alpha_ids = net.alpha.to_vec();
    let w_ids = net.weight_params();
    let mut group = alpha_ids.clone();
    group.extend(&w_ids);
    let frozen_for_alpha = complement(store, &alpha_ids);
    let frozen_for_w = complement(store, &w_ids);
    let mut adam_alpha = Adam::new(tc.adam(), alpha_ids);
    let mut adam_w = Adam::new(tc.adam(), w_ids);
    let mut loss = |g: &Graph<f32>, s: &ParamStore<f32>, b: &Batch<f32>, r: &mut ChaCha8Rng| {
        combined_loss_darts(g, s, net, b, v, eps, r)
    };

    let mut stopper = EarlyStopping::new(tc.patience);
    let mut best = store.snapshot(&group);
    let mut epochs = Vec::new();
    let mut trajectory = Vec::new();
    let mut reason = StopReason::MaxEpochs;
    let mut train_order: Vec<usize> = (0..splits.train.len()).collect();
    let mut val_order: Vec<usize> = (0..splits.val.len()).collect();
    for epoch in 1..=tc.max_epochs {
        train_order.shuffle(&mut rng);
        val_order.shuffle(&mut rng);
        let val_batches: Vec<&[usize]> = splits.val.batches(&val_order, tc.batch_size).collect();
        let (mut total, mut count) = (0.0, 0usize);
        for (i, idx) in splits.train.batches(&train_order, tc.batch_size).enumerate() {
            let vb = splits.val.batch::<f32>(val_batches[i % val_batches.len()]);
            step(store, &frozen_for_alpha, &mut adam_alpha, &vb, &mut rng, &mut loss)
                .map_err(|e| e.context(format!("architecture step, epoch {epoch}")))?;
            let tb = splits.train.batch::<f32>(idx);
            let l = step(store, &frozen_for_w, &mut adam_w, &tb, &mut rng, &mut loss)
                .map_err(|e| e.context(format!("weight step, epoch {epoch}")))?;
            total += l * idx.len() as f64;
            count += idx.len();
        }
        let val_loss = evaluate(store, &splits.val, tc.batch_size, &mut rng, &mut loss)?;
        epochs.push(EpochStat {
            epoch,
            train_loss: total / count.max(1) as f64,
            val_loss,
        });
        trajectory.extend(alpha_records(net, store, epoch));
        if stopper.observe(epoch, val_loss) {
            best = store.snapshot(&group);
        }
        if stopper.should_stop() {
            reason = StopReason::Patience;
            break;
        }
    }
    store.restore(&group, &best);
    let (j1, j2) = select_argmax(&net.alphas(store))?;
    let combo = SelectedCombo {
        method: Method::Darts,
        task1: j1,
        task2: j2,
        task1_id: net.candidates.task1[j1].id(),
        task2_id: net.candidates.task2[j2].id(),
        val_loss: stopper.best(),
    };
    let report = TrainReport {
        stop_epoch: epochs.len(),
        epochs,
        stop_reason: reason,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        alpha_trajectory: Some(trajectory),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((combo, report))
}

/// Validation combined loss of every `(task1, task2)` pair with frozen
/// weights, in row-major pair order.
pub fn exhaustive_combo_search(
    store: &ParamStore<f32>,
    candidates: &Candidates,
    data: &Prepared,
    cfg: &SelectionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<((usize, usize), f64)>, PipelineError> {
    let v = cfg.v();
    let mut out = Vec::new();
    for (i, t1) in candidates.task1.iter().enumerate() {
        for (j, t2) in candidates.task2.iter().enumerate() {
            let mut loss = |g: &Graph<f32>, s: &ParamStore<f32>, b: &Batch<f32>, r: &mut ChaCha8Rng| {
                combined_loss_spos(g, s, t1, t2, b, v, r)
            };
            out.push(((i, j), evaluate(store, data, cfg.batch_size, rng, &mut loss)?));
        }
    }
    Ok(out)
}

/// Supernet training along uniformly sampled single paths, then an
/// exhaustive search over all pairs for the lowest validation loss. The
/// report's wall time covers the supernet stage only.
pub fn spos_search(
    store: &mut ParamStore<f32>,
    candidates: &Candidates,
    splits: &Splits,
    cfg: &SelectionConfig,
) -> Result<(SelectedCombo, TrainReport), PipelineError> {
    let start = Instant::now();
    let tc = cfg.search_config();
    let mut rng = derived_rng(cfg.seed, "spos");
    let v = cfg.v();
    let (n1, n2) = (candidates.task1.len(), candidates.task2.len());
    let group = candidates.params();
    let mut adam = Adam::new(tc.adam(), group.clone());
    let mut stopper = EarlyStopping::new(tc.patience);
    let mut best = store.snapshot(&group);
    let mut epochs = Vec::new();
    let mut reason = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    let val_order: Vec<usize> = (0..splits.val.len()).collect();
    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for idx in splits.train.batches(&order, tc.batch_size) {
            let (i, j) = sample_path(&mut rng, n1, n2);
            let (t1, t2) = (&candidates.task1[i], &candidates.task2[j]);
            let path: Vec<ParamId> = t1.params().iter().chain(t2.params()).copied().collect();
            let frozen = complement(store, &path);
            let mut loss = |g: &Graph<f32>, s: &ParamStore<f32>, b: &Batch<f32>, r: &mut ChaCha8Rng| {
                combined_loss_spos(g, s, t1, t2, b, v, r)
            };
            let batch = splits.train.batch::<f32>(idx);
            let l = step(store, &frozen, &mut adam, &batch, &mut rng, &mut loss)
                .map_err(|e| e.context(format!("supernet step, epoch {epoch}")))?;
            total += l * idx.len() as f64;
            count += idx.len();
        }
        // epoch statistic: validation loss along uniformly sampled paths
        let (mut vtotal, mut vcount) = (0.0, 0usize);
        for idx in splits.val.batches(&val_order, tc.batch_size) {
            let (i, j) = sample_path(&mut rng, n1, n2);
            let batch = splits.val.batch::<f32>(idx);
            let g = Graph::inference();
            let l = combined_loss_spos(&g, store, &candidates.task1[i], &candidates.task2[j], &batch, v, &mut rng)?;
            vtotal += g.scalar(l) as f64 * idx.len() as f64;
            vcount += idx.len();
        }
        let val_loss = vtotal / vcount.max(1) as f64;
        epochs.push(EpochStat {
            epoch,
            train_loss: total / count.max(1) as f64,
            val_loss,
        });
        if stopper.observe(epoch, val_loss) {
            best = store.snapshot(&group);
        }
        if stopper.should_stop() {
            reason = StopReason::Patience;
            break;
        }
    }
    store.restore(&group, &best);
    let supernet_time = start.elapsed().as_secs_f64();
    let losses = exhaustive_combo_search(store, candidates, &splits.val, cfg, &mut rng)?;
    let mut chosen = losses[0];
    for &c in &losses[1..] {
        if c.1 < chosen.1 {
            chosen = c;
        }
    }
    let ((i, j), val_loss) = chosen;
    let combo = SelectedCombo {
        method: Method::Spos,
        task1: i,
        task2: j,
        task1_id: candidates.task1[i].id(),
        task2_id: candidates.task2[j].id(),
        val_loss,
    };
    let report = TrainReport {
        stop_epoch: epochs.len(),
        epochs,
        stop_reason: reason,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        alpha_trajectory: None,
        wall_time_s: supernet_time,
    };
    Ok((combo, report))
}

/// Connected training of one selected pair with the single-path loss.
pub fn post_train(
    store: &mut ParamStore<f32>,
    t1: &Model,
    t2: &Model,
    splits: &Splits,
    cfg: &SelectionConfig,
) -> Result<TrainReport, PipelineError> {
    let mut rng = derived_rng(cfg.seed, &format!("post/{}/{}", t1.id(), t2.id()));
    let v = cfg.v();
    let group: Vec<ParamId> = t1.params().iter().chain(t2.params()).copied().collect();
    let mut loss = |g: &Graph<f32>, s: &ParamStore<f32>, b: &Batch<f32>, r: &mut ChaCha8Rng| {
        combined_loss_spos(g, s, t1, t2, b, v, r)
    };
    fit(store, &group, &splits.train, &splits.val, &cfg.train_config(), &mut rng, &mut loss)
        .map_err(|e| e.context(format!("post-training ({}, {})", t1.id(), t2.id())))
}

/// Task1 outputs `[n, 6]` on every event of `data`.
pub fn predict_task1(
    store: &ParamStore<f32>,
    t1: &Model,
    data: &Prepared,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f32>, PipelineError> {
    let order: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(6 * data.len());
    for idx in data.batches(&order, batch_size) {
        let batch = data.batch::<f32>(idx);
        let g = Graph::inference();
        let y = t1.forward_task1(&g, store, task1_input(&g, &batch), rng)?;
        out.extend_from_slice(g.value(y).data());
    }
    Ok(out)
}

fn task2_scores(
    store: &ParamStore<f32>,
    t2: &Model,
    features: &[f32],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, PipelineError> {
    let n = features.len() / 6;
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(batch_size.max(1)) {
        let b = batch_size.min(n - start);
        let x = Tensor::new(vec![b, 6], features[6 * start..6 * (start + b)].to_vec())?;
        let g = Graph::inference();
        let y = t2.forward_task2(&g, store, g.input(x)?, rng)?;
        out.extend(g.value(y).data().iter().map(|&v| v as f64));
    }
    Ok(out)
}

/// Test metrics of a connected pair: Task1 loss and Task2 AUC.
pub fn evaluate_pair(
    store: &ParamStore<f32>,
    t1: &Model,
    t2: &Model,
    data: &Prepared,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(PairMetrics, Vec<f32>), PipelineError> {
    let pred = predict_task1(store, t1, data, batch_size, rng)?;
    let n = data.len();
    // f64 so that a drifting unconstrained Task1 output (v1 = 0) still
    // yields a finite error
    let widen = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let g = Graph::<f64>::inference();
    let p = g.input(Tensor::new(vec![n, 6], widen(&pred))?)?;
    let t = g.input(Tensor::new(vec![n, 6], widen(data.truth()))?)?;
    let mse_t1 = g.scalar(loss_task1(&g, p, t)?);
    let scores = task2_scores(store, t2, &pred, batch_size, rng)?;
    let auc_t2 = auc(&scores, data.labels())?;
    Ok((PairMetrics { mse_t1, auc_t2 }, pred))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub combo: SelectedCombo,
    pub epochs_pre: usize,
    pub search: Option<TrainReport>,
    pub post: TrainReport,
    pub metrics: PairMetrics,
    /// Task1 outputs of the final pair on the test split, `[n, 6]`.
    pub test_task1: Vec<f32>,
    pub wall_time_s: f64,
}

#[allow(clippy::too_many_arguments)]
fn finish(
    mut store: ParamStore<f32>,
    candidates: &Candidates,
    combo: SelectedCombo,
    epochs_pre: usize,
    search: Option<TrainReport>,
    splits: &Splits,
    cfg: &SelectionConfig,
    start: Instant,
) -> Result<RunOutcome, PipelineError> {
    let (t1, t2) = (&candidates.task1[combo.task1], &candidates.task2[combo.task2]);
    let post = post_train(&mut store, t1, t2, splits, cfg)?;
    let mut rng = derived_rng(cfg.seed, "evaluate");
    let (metrics, test_task1) = evaluate_pair(&store, t1, t2, &splits.test, cfg.batch_size, &mut rng)?;
    Ok(RunOutcome {
        combo,
        epochs_pre,
        search,
        post,
        metrics,
        test_task1,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Search with architecture weights from the pre-trained candidates, then
/// post-train and evaluate the selected pair.
pub fn run_darts(pre: &Pretrained, splits: &Splits, cfg: &SelectionConfig, dummies: bool) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut store = pre.store.clone();
    let candidates = if dummies {
        pre.candidates.clone()
    } else {
        pre.candidates.without_dummies()
    };
    let net = Supernet::new(&mut store, candidates)?;
    let (combo, report) = darts_search(&mut store, &net, splits, cfg)?;
    finish(store, &net.candidates, combo, pre.epochs(), Some(report), splits, cfg, start)
}

/// Supernet training and pair search without dummies, then post-training.
pub fn run_spos(pre: &Pretrained, splits: &Splits, cfg: &SelectionConfig) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut store = pre.store.clone();
    let candidates = pre.candidates.without_dummies();
    let (combo, report) = spos_search(&mut store, &candidates, splits, cfg)?;
    finish(store, &candidates, combo, pre.epochs(), Some(report), splits, cfg, start)
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub task1: usize,
    pub task2: usize,
    pub task1_id: String,
    pub task2_id: String,
    pub reoptimized: bool,
    pub val_loss: f64,
    pub metrics: PairMetrics,
    pub report: TrainReport,
    pub test_task1: Vec<f32>,
}

/// Trains every pair of non-dummy candidates and ranks them by validation
/// combined loss (stable, so ties keep pair order).
///
/// With `reoptimize`, each pair starts from the pre-trained weights and is
/// trained connected. Without it, the pre-trained Task1 model is frozen and
/// a freshly initialised Task2 model is trained on its outputs.
pub fn grid_search(
    pre: &Pretrained,
    splits: &Splits,
    cfg: &SelectionConfig,
    reoptimize: bool,
) -> Result<Vec<GridResult>, PipelineError> {
    cfg.validate()?;
    let candidates = pre.candidates.without_dummies();
    let v = cfg.v();
    let mut results = Vec::new();
    for (i, t1) in candidates.task1.iter().enumerate() {
        let mut rng = derived_rng(cfg.seed, &format!("grid/features/{}", t1.id()));
        // frozen Task1 outputs for the sequential strategy
        let features = if reoptimize {
            None
        } else {
            let train = predict_task1(&pre.store, t1, &splits.train, cfg.batch_size, &mut rng)?;
            let val = predict_task1(&pre.store, t1, &splits.val, cfg.batch_size, &mut rng)?;
            Some((splits.train.with_features(train), splits.val.with_features(val)))
        };
        for (j, t2) in candidates.task2.iter().enumerate() {
            let mut store = pre.store.clone();
            let report = match &features {
                None => post_train(&mut store, t1, t2, splits, cfg)?,
                Some((train, val)) => {
                    let mut scratch = ParamStore::new();
                    let fresh = Model::build(t2.spec, &mut scratch)?;
                    for (&dst, &src) in t2.params().iter().zip(fresh.params()) {
                        store.set(dst, scratch.get(src).clone());
                    }
                    let mut rng = derived_rng(cfg.seed, &format!("grid/sequential/{}/{}", t1.id(), t2.id()));
                    let mut loss = |g: &Graph<f32>, s: &ParamStore<f32>, b: &Batch<f32>, r: &mut ChaCha8Rng| {
                        let y = t2.forward_task2(g, s, g.constant(b.truth.clone()), r)?;
                        loss_task2(g, y, g.constant(b.labels.clone()))
                    };
                    fit(&mut store, t2.params(), train, val, &cfg.train_config(), &mut rng, &mut loss)
                        .map_err(|e| e.context(format!("sequential training ({}, {})", t1.id(), t2.id())))?
                }
            };
            let mut rng = derived_rng(cfg.seed, &format!("grid/eval/{}/{}", t1.id(), t2.id()));
            let mut loss = |g: &Graph<f32>, s: &ParamStore<f32>, b: &Batch<f32>, r: &mut ChaCha8Rng| {
                combined_loss_spos(g, s, t1, t2, b, v, r)
            };
            let pair = format!("evaluating ({}, {})", t1.id(), t2.id());
            let val_loss =
                evaluate(&store, &splits.val, cfg.batch_size, &mut rng, &mut loss).map_err(|e| e.context(&pair))?;
            let (metrics, test_task1) = evaluate_pair(&store, t1, t2, &splits.test, cfg.batch_size, &mut rng)
                .map_err(|e| e.context(&pair))?;
            results.push(GridResult {
                task1: i,
                task2: j,
                task1_id: t1.id(),
                task2_id: t2.id(),
                reoptimized: reoptimize,
                val_loss,
                metrics,
                report,
                test_task1,
            });
        }
    }
    results.sort_by(|a, b| a.val_loss.total_cmp(&b.val_loss));
    Ok(results)
}
