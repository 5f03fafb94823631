//! Multi-seed experiment orchestration: method comparison, the
//! re-optimization study and the scaling benchmark, plus report output.

mod powerlaw;
mod report;
mod svg;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::ParamStore;
use crate::datagen::{load_dataset, DataError, Dataset, GeneratorConfig};
use crate::gp::{validity_fraction, GpConfig, GpError, GpSet, ValidityReport};
use crate::pipeline::{
    evaluate_pair, grid_search, median, post_train, pretrain, run_darts, run_spos, AlphaRecord, Candidates,
    GridResult, PipelineError, Pretrained, RunOutcome, SelectionConfig, Splits,
};
use crate::seed::derived_rng;

pub use powerlaw::{fit_power_law, PowerLawFit};
pub use report::{emit_report, emit_scaling, read_predictions, read_runs, render_charts, RunRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("no runs")]
    NoRuns,
    #[error("power-law fit: {0}")]
    Fit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Darts,
    Spos,
    Grid,
    ReoptStudy,
    Scaling,
    GpValidity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: PathBuf,
    /// Used by dataset generation only.
    pub generator: GeneratorConfig,
    pub method: Study,
    pub v1: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Zeros and Noise candidates in DARTS runs.
    pub dummies: bool,
    /// Replica counts for the scaling study.
    pub replicas: Vec<usize>,
    pub out: PathBuf,
    /// Training hyperparameters; `v1` and `seed` are set per run.
    pub training: SelectionConfig,
    pub gp: GpConfig,
    pub gp_validity: bool,
    /// Epochs per training phase in the scaling study (no early stop).
    pub scaling_epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            generator: GeneratorConfig::default(),
            method: Study::Darts,
            v1: vec![0.0, 0.1, 0.5, 0.9, 0.99],
            seeds: (0..5).collect(),
            dummies: false,
            replicas: (1..=5).collect(),
            out: PathBuf::from("out"),
            training: SelectionConfig::default(),
            gp: GpConfig::default(),
            gp_validity: true,
            scaling_epochs: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.v1.is_empty() || self.seeds.is_empty() {
            return bad("v1 and seed lists must be non-empty".into());
        }
        if let Some(v) = self.v1.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return bad(format!("v1 = {v} outside [0, 1]"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.replicas.is_empty() || self.replicas.contains(&0) {
            return bad("replica counts must be at least 1".into());
        }
        if self.scaling_epochs == 0 {
            return bad("scaling epochs must be positive".into());
        }
        self.selection(self.v1[0], self.seeds[0])?;
        if self.gp_validity {
            self.gp.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Per-run training configuration.
    pub fn selection(&self, v1: f64, seed: u64) -> Result<SelectionConfig, HarnessError> {
        let cfg = SelectionConfig {
            v1,
            seed,
            ..self.training
        };
        cfg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// One row of `runs.csv` plus the data that goes to side files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub run_id: String,
    pub seed: u64,
    pub method: String,
    pub v1: f64,
    pub model_t1: String,
    pub model_t2: String,
    pub mse_t1: f64,
    pub auc_t2: f64,
    pub gp: Option<ValidityReport>,
    pub epochs_pre: usize,
    pub epochs_search: usize,
    pub epochs_post: usize,
    /// `ok` or `failed: <reason>`.
    pub status: String,
    pub wall_time_s: f64,
    pub alpha_trajectory: Vec<AlphaRecord>,
    /// Task1 outputs on the test split, `[n, 6]`.
    pub test_task1: Vec<f32>,
}

impl RunReport {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn gp_fraction(&self) -> Option<f64> {
        self.gp.map(|g| g.overall)
    }
}

/// Dataset, splits and (optionally) GP predictions on the test split,
/// shared by every run of an experiment.
pub struct Workspace {
    pub dataset: Dataset,
    pub splits: Splits,
    pub gp: Option<GpSet>,
    gp_test: Option<(Vec<f64>, Vec<f64>)>,
}

impl Workspace {
    pub fn new(dataset: Dataset, gp: Option<GpSet>) -> Result<Self, HarnessError> {
        let splits = Splits::from_dataset(&dataset)?;
        let gp_test = gp.as_ref().map(|g| g.predict(&splits.test)).transpose()?;
        Ok(Self {
            dataset,
            splits,
            gp,
            gp_test,
        })
    }

    /// Loads `cfg.data` and fits the GP oracle when validity is enabled.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let dataset = load_dataset(&cfg.data)?;
        Self::prepare(dataset, cfg)
    }

    pub fn prepare(dataset: Dataset, cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let splits = Splits::from_dataset(&dataset)?;
        let gp = if cfg.gp_validity && cfg.method != Study::Scaling {
            Some(GpSet::fit(&splits.train, &cfg.gp)?)
        } else {
            None
        };
        Self::new(dataset, gp)
    }

    pub fn validity(&self, test_task1: &[f32]) -> Result<Option<ValidityReport>, HarnessError> {
        match &self.gp_test {
            None => Ok(None),
            Some((m, v)) => Ok(Some(validity_fraction(test_task1, m, v)?)),
        }
    }
}

/// Hex prefix of SHA-256 over the run's configuration, seed, label and
/// dataset checksum.
pub fn run_id(cfg: &SelectionConfig, label: &str, checksum: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.update(label.as_bytes());
    h.update(checksum.as_bytes());
    hex::encode(&h.finalize()[..8])
}

fn failed(id: String, seed: u64, method: &str, v1: f64, err: &dyn std::fmt::Display) -> RunReport {
    log::warn!("run {id} ({method}, seed {seed}, v1 {v1}) failed: {err}");
    RunReport {
        run_id: id,
        seed,
        method: method.to_string(),
        v1,
        model_t1: String::new(),
        model_t2: String::new(),
        mse_t1: f64::NAN,
        auc_t2: f64::NAN,
        gp: None,
        epochs_pre: 0,
        epochs_search: 0,
        epochs_post: 0,
        status: format!("failed: {err}"),
        wall_time_s: 0.0,
        alpha_trajectory: Vec::new(),
        test_task1: Vec::new(),
    }
}

fn from_outcome(ws: &Workspace, id: String, method: &str, cfg: &SelectionConfig, o: RunOutcome) -> Result<RunReport, HarnessError> {
    let search = o.search.as_ref();
    Ok(RunReport {
        run_id: id,
        seed: cfg.seed,
        method: method.to_string(),
        v1: cfg.v1,
        model_t1: o.combo.task1_id,
        model_t2: o.combo.task2_id,
        mse_t1: o.metrics.mse_t1,
        auc_t2: o.metrics.auc_t2,
        gp: ws.validity(&o.test_task1)?,
        epochs_pre: o.epochs_pre,
        epochs_search: search.map_or(0, |s| s.stop_epoch),
        epochs_post: o.post.stop_epoch,
        status: "ok".into(),
        wall_time_s: o.wall_time_s,
        alpha_trajectory: search.and_then(|s| s.alpha_trajectory.clone()).unwrap_or_default(),
        test_task1: o.test_task1,
    })
}

fn from_grid(ws: &Workspace, method: &str, cfg: &SelectionConfig, pre: &Pretrained, r: &GridResult) -> Result<RunReport, HarnessError> {
    let label = format!("{method}/{}/{}", r.task1_id, r.task2_id);
    Ok(RunReport {
        run_id: run_id(cfg, &label, &ws.dataset.meta.checksum),
        seed: cfg.seed,
        method: method.to_string(),
        v1: cfg.v1,
        model_t1: r.task1_id.clone(),
        model_t2: r.task2_id.clone(),
        mse_t1: r.metrics.mse_t1,
        auc_t2: r.metrics.auc_t2,
        gp: ws.validity(&r.test_task1)?,
        epochs_pre: pre.epochs(),
        epochs_search: 0,
        epochs_post: r.report.stop_epoch,
        status: "ok".into(),
        wall_time_s: r.report.wall_time_s,
        alpha_trajectory: Vec::new(),
        test_task1: r.test_task1.clone(),
    })
}

/// Pre-trains the standard candidates (dummies included, `replicas` copies
/// of each learned model) for one seed.
pub fn pretrain_seed(ws: &Workspace, training: &SelectionConfig, seed: u64, replicas: usize) -> Result<Pretrained, HarnessError> {
    let cfg = SelectionConfig { seed, ..*training };
    let mut store = ParamStore::new();
    let candidates = Candidates::standard(&mut store, seed, replicas, true)?;
    Ok(pretrain(store, candidates, &ws.splits, &cfg)?)
}

/// Grid rows for every pair, ranked, followed by a `-best` summary row.
fn grid_rows(
    ws: &Workspace,
    pre: &Pretrained,
    cfg: &SelectionConfig,
    reoptimize: bool,
    method: &str,
) -> Result<Vec<RunReport>, HarnessError> {
    let results = grid_search(pre, &ws.splits, cfg, reoptimize)?;
    let mut rows = results
        .iter()
        .map(|r| from_grid(ws, method, cfg, pre, r))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best = rows[0].clone();
    best.method = format!("{method}-best");
    best.run_id = run_id(cfg, &format!("{method}-best"), &ws.dataset.meta.checksum);
    rows.push(best);
    Ok(rows)
}

fn method_label(cfg: &ExperimentConfig) -> Result<&'static str, HarnessError> {
    match cfg.method {
        Study::Darts => Ok("darts"),
        Study::Spos => Ok("spos"),
        Study::Grid => Ok("grid"),
        other => Err(HarnessError::Config(format!("{other:?} is not a selection method"))),
    }
}

/// Selection runs for every `(seed, v1)`: DARTS and SPOS give one row per
/// run, grid gives one row per pair plus the best pair. A failing run is
/// recorded in its status and the batch continues.
pub fn run_method_experiment(cfg: &ExperimentConfig, ws: &Workspace) -> Result<Vec<RunReport>, HarnessError> {
    cfg.validate()?;
    let method = method_label(cfg)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        match pretrain_seed(ws, &cfg.training, seed, 1) {
            Ok(pre) => rows.extend(method_runs(cfg, ws, seed, &pre)?),
            Err(e) => {
                for &v1 in &cfg.v1 {
                    let id = run_id(&cfg.selection(v1, seed)?, method, &ws.dataset.meta.checksum);
                    rows.push(failed(id, seed, method, v1, &format!("pre-training: {e}")));
                }
            }
        }
    }
    Ok(rows)
}

/// The runs of one seed for every v1, starting from shared pre-trained
/// candidates.
pub fn method_runs(cfg: &ExperimentConfig, ws: &Workspace, seed: u64, pre: &Pretrained) -> Result<Vec<RunReport>, HarnessError> {
    let method = method_label(cfg)?;
    let label = if cfg.method == Study::Darts && cfg.dummies {
        "darts+dummies"
    } else {
        method
    };
    let mut rows = Vec::new();
    for &v1 in &cfg.v1 {
        let sc = cfg.selection(v1, seed)?;
        let id = run_id(&sc, label, &ws.dataset.meta.checksum);
        let result = match cfg.method {
            Study::Darts => run_darts(pre, &ws.splits, &sc, cfg.dummies)
                .map_err(HarnessError::from)
                .and_then(|o| from_outcome(ws, id.clone(), method, &sc, o))
                .map(|r| vec![r]),
            Study::Spos => run_spos(pre, &ws.splits, &sc)
                .map_err(HarnessError::from)
                .and_then(|o| from_outcome(ws, id.clone(), method, &sc, o))
                .map(|r| vec![r]),
            _ => grid_rows(ws, pre, &sc, true, method),
        };
        match result {
            Ok(r) => rows.extend(r),
            Err(e) => rows.push(failed(id, seed, method, v1, &e)),
        }
    }
    Ok(rows)
}

/// Per seed: every pair trained connected at v1 = 0 (`reopt`) and
/// sequentially (`sequential`), then the best re-optimized pair post-trained
/// at each configured v1 (`reopt-sweep`).
pub fn reopt_study(cfg: &ExperimentConfig, ws: &Workspace) -> Result<Vec<RunReport>, HarnessError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        match pretrain_seed(ws, &cfg.training, seed, 1) {
            Ok(pre) => rows.extend(reopt_runs(cfg, ws, seed, &pre)?),
            Err(e) => {
                let id = run_id(&cfg.selection(0.0, seed)?, "reopt", &ws.dataset.meta.checksum);
                rows.push(failed(id, seed, "reopt", 0.0, &format!("pre-training: {e}")));
            }
        }
    }
    Ok(rows)
}

/// The re-optimization study for one seed.
pub fn reopt_runs(cfg: &ExperimentConfig, ws: &Workspace, seed: u64, pre: &Pretrained) -> Result<Vec<RunReport>, HarnessError> {
    let checksum = &ws.dataset.meta.checksum;
    let sc0 = cfg.selection(0.0, seed)?;
    let mut rows = Vec::new();
    let mut best = None;
    for (reoptimize, method) in [(true, "reopt"), (false, "sequential")] {
        match grid_rows(ws, pre, &sc0, reoptimize, method) {
            Ok(r) => {
                if reoptimize {
                    best = Some((r[0].model_t1.clone(), r[0].model_t2.clone()));
                }
                rows.extend(r);
            }
            Err(e) => rows.push(failed(run_id(&sc0, method, checksum), seed, method, 0.0, &e)),
        }
    }
    let Some((m1, m2)) = best else { return Ok(rows) };
    let candidates = pre.candidates.without_dummies();
    let t1 = candidates.task1.iter().find(|m| m.id() == m1).expect("selected task1 candidate");
    let t2 = candidates.task2.iter().find(|m| m.id() == m2).expect("selected task2 candidate");
    for &v1 in &cfg.v1 {
        let sc = cfg.selection(v1, seed)?;
        let id = run_id(&sc, "reopt-sweep", checksum);
        let start = Instant::now();
        let run = || -> Result<RunReport, HarnessError> {
            let mut store = pre.store.clone();
            let post = post_train(&mut store, t1, t2, &ws.splits, &sc)?;
            let mut rng = derived_rng(seed, "evaluate");
            let (metrics, test_task1) = evaluate_pair(&store, t1, t2, &ws.splits.test, sc.batch_size, &mut rng)?;
            Ok(RunReport {
                run_id: id.clone(),
                seed,
                method: "reopt-sweep".into(),
                v1,
                model_t1: m1.clone(),
                model_t2: m2.clone(),
                mse_t1: metrics.mse_t1,
                auc_t2: metrics.auc_t2,
                gp: ws.validity(&test_task1)?,
                epochs_pre: pre.epochs(),
                epochs_search: 0,
                epochs_post: post.stop_epoch,
                status: "ok".into(),
                wall_time_s: start.elapsed().as_secs_f64(),
                alpha_trajectory: Vec::new(),
                test_task1,
            })
        };
        rows.push(run().unwrap_or_else(|e| failed(id.clone(), seed, "reopt-sweep", v1, &e)));
    }
    Ok(rows)
}

/// One timing measurement of the scaling study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    /// `darts`, `spos-supernet` or `grid`.
    pub method: String,
    pub replicas: usize,
    /// Candidates per task.
    pub n_models: usize,
    pub n_events: usize,
    pub wall_time_s: f64,
    pub auc_t2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<TimingRow>,
    pub fits: BTreeMap<String, PowerLawFit>,
}

/// Wall time of the search stage of each method as the candidate count
/// grows by replication. Every phase runs a fixed number of epochs.
pub fn scaling_experiment(cfg: &ExperimentConfig, ws: &Workspace) -> Result<ScalingReport, HarnessError> {
    cfg.validate()?;
    let epochs = cfg.scaling_epochs;
    let sc = SelectionConfig {
        max_epochs: epochs,
        patience_train: epochs - 1,
        patience_search: epochs - 1,
        ..cfg.selection(cfg.v1[0], cfg.seeds[0])?
    };
    let mut rows = Vec::new();
    for &k in &cfg.replicas {
        log::info!("scaling: {k} replicas");
        let pre = pretrain_seed(ws, &sc, sc.seed, k)?;
        let n_models = pre.candidates.without_dummies().task1.len();
        let mut push = |method: &str, wall_time_s: f64, auc_t2: f64| {
            rows.push(TimingRow {
                method: method.into(),
                replicas: k,
                n_models,
                n_events: ws.dataset.len(),
                wall_time_s,
                auc_t2,
            })
        };
        let darts = run_darts(&pre, &ws.splits, &sc, false)?;
        push("darts", darts.search.as_ref().map_or(0.0, |s| s.wall_time_s), darts.metrics.auc_t2);
        let spos = run_spos(&pre, &ws.splits, &sc)?;
        push("spos-supernet", spos.search.as_ref().map_or(0.0, |s| s.wall_time_s), spos.metrics.auc_t2);
        let start = Instant::now();
        let grid = grid_search(&pre, &ws.splits, &sc, true)?;
        push("grid", start.elapsed().as_secs_f64(), grid[0].metrics.auc_t2);
    }
    let mut fits = BTreeMap::new();
    if cfg.replicas.len() >= 2 {
        for method in ["darts", "spos-supernet", "grid"] {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.method == method)
                .map(|r| (r.n_models as f64, r.wall_time_s))
                .collect();
            fits.insert(method.to_string(), fit_power_law(&pts)?);
        }
    }
    Ok(ScalingReport { rows, fits })
}

/// Median metrics of successful runs per `(method, v1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub method: String,
    pub v1: f64,
    pub runs: usize,
    pub mse_t1: f64,
    pub auc_t2: f64,
    pub gp_fraction: Option<f64>,
}

pub fn summarize(rows: &[RunRow]) -> Vec<Summary> {
    let mut groups: BTreeMap<(String, u64), Vec<&RunRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.status == "ok") {
        // order-preserving key for non-negative v1
        groups.entry((r.method.clone(), r.v1.to_bits())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((method, v1), rs)| {
            let col = |f: &dyn Fn(&RunRow) -> Option<f64>| {
                let v: Vec<f64> = rs.iter().filter_map(|r| f(r)).collect();
                median(&v)
            };
            Summary {
                method,
                v1: f64::from_bits(v1),
                runs: rs.len(),
                mse_t1: col(&|r| Some(r.mse_t1)).unwrap_or(f64::NAN),
                auc_t2: col(&|r| Some(r.auc_t2)).unwrap_or(f64::NAN),
                gp_fraction: col(&|r| r.gp_fraction),
            }
        })
        .collect()
}

/// Median test AUC and MSE per `(task1, task2)` pair over successful rows
/// of `method`.
pub fn pair_medians(rows: &[RunRow], method: &str) -> BTreeMap<(String, String), (f64, f64)> {
    let mut groups: BTreeMap<(String, String), Vec<&RunRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.status == "ok" && r.method == method) {
        groups.entry((r.model_t1.clone(), r.model_t2.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(k, rs)| {
            let auc: Vec<f64> = rs.iter().map(|r| r.auc_t2).collect();
            let mse: Vec<f64> = rs.iter().map(|r| r.mse_t1).collect();
            (k, (median(&auc).expect("non-empty"), median(&mse).expect("non-empty")))
        })
        .collect()
}
