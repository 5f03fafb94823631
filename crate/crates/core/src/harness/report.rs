//! CSV, binary and SVG output of experiment runs.
//!
//! `runs.csv`, `alpha_trajectory.csv`, `validity.csv` and the prediction
//! files depend only on (dataset, configuration, seed); wall times go to
//! `timings.csv` so the rest can be compared byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::svg::{box_chart, line_chart};
use super::{summarize, HarnessError, RunReport, ScalingReport};
use crate::gp::VARIABLES;

/// The deterministic columns of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: String,
    pub seed: u64,
    pub method: String,
    pub v1: f64,
    pub model_t1: String,
    pub model_t2: String,
    pub mse_t1: f64,
    pub auc_t2: f64,
    pub gp_fraction: Option<f64>,
    pub epochs_pre: usize,
    pub epochs_search: usize,
    pub epochs_post: usize,
    pub status: String,
}

impl From<&RunReport> for RunRow {
    fn from(r: &RunReport) -> Self {
        Self {
            run_id: r.run_id.clone(),
            seed: r.seed,
            method: r.method.clone(),
            v1: r.v1,
            model_t1: r.model_t1.clone(),
            model_t2: r.model_t2.clone(),
            mse_t1: r.mse_t1,
            auc_t2: r.auc_t2,
            gp_fraction: r.gp_fraction(),
            epochs_pre: r.epochs_pre,
            epochs_search: r.epochs_search,
            epochs_post: r.epochs_post,
            status: r.status.clone(),
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => HarnessError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => HarnessError::Format {
            path: path.to_path_buf(),
            detail: format!("{kind:?}"),
        },
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io(path))
}

/// Like `write_csv`, but writes the header even with no rows.
fn write_csv_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io(path))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(io(path))
}

#[derive(Serialize)]
struct TimingCsv<'a> {
    run_id: &'a str,
    seed: u64,
    method: &'a str,
    v1: f64,
    wall_time_s: f64,
}

#[derive(Serialize)]
struct AlphaCsv<'a> {
    run_id: &'a str,
    epoch: usize,
    task: usize,
    candidate: &'a str,
    alpha: f64,
    weight: f64,
}

/// Writes every report file into `out`, replacing earlier output.
pub fn emit_report(reports: &[RunReport], out: &Path) -> Result<(), HarnessError> {
    if reports.is_empty() {
        return Err(HarnessError::NoRuns);
    }
    let pred_dir = out.join("predictions");
    fs::create_dir_all(&pred_dir).map_err(io(&pred_dir))?;

    let rows: Vec<RunRow> = reports.iter().map(RunRow::from).collect();
    write_csv(&out.join("runs.csv"), &rows)?;
    write_csv(
        &out.join("timings.csv"),
        reports.iter().map(|r| TimingCsv {
            run_id: &r.run_id,
            seed: r.seed,
            method: &r.method,
            v1: r.v1,
            wall_time_s: r.wall_time_s,
        }),
    )?;

    let alphas: Vec<AlphaCsv> = reports
        .iter()
        .flat_map(|r| {
            r.alpha_trajectory.iter().map(|a| AlphaCsv {
                run_id: &r.run_id,
                epoch: a.epoch,
                task: a.task,
                candidate: &a.candidate,
                alpha: a.alpha,
                weight: a.weight,
            })
        })
        .collect();
    write_csv_header(
        &out.join("alpha_trajectory.csv"),
        &["run_id", "epoch", "task", "candidate", "alpha", "weight"],
        &alphas,
    )?;

    let mut header = vec!["run_id", "seed", "method", "v1"];
    header.extend(VARIABLES);
    header.push("overall");
    let validity: Vec<Vec<String>> = reports
        .iter()
        .filter_map(|r| {
            let gp = r.gp?;
            let mut rec = vec![r.run_id.clone(), r.seed.to_string(), r.method.clone(), r.v1.to_string()];
            rec.extend(gp.fractions.iter().map(f64::to_string));
            rec.push(gp.overall.to_string());
            Some(rec)
        })
        .collect();
    write_csv_header(&out.join("validity.csv"), &header, &validity)?;

    for r in reports.iter().filter(|r| !r.test_task1.is_empty()) {
        let bytes: Vec<u8> = r.test_task1.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_file(&pred_dir.join(format!("{}.bin", r.run_id)), &bytes)?;
    }
    render_charts(&rows, out)
}

pub fn read_runs(out: &Path) -> Result<Vec<RunRow>, HarnessError> {
    let path = out.join("runs.csv");
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<RunRow>, _>>()
        .map_err(|e| csv_err(&path, e))?;
    if rows.is_empty() {
        return Err(HarnessError::NoRuns);
    }
    Ok(rows)
}

/// Test-split Task1 predictions `[n, 6]` saved for `run_id`.
pub fn read_predictions(out: &Path, run_id: &str) -> Result<Vec<f32>, HarnessError> {
    let path = out.join("predictions").join(format!("{run_id}.bin"));
    let bytes = fs::read(&path).map_err(io(&path))?;
    if bytes.len() % 24 != 0 {
        return Err(HarnessError::Format {
            path,
            detail: format!("{} bytes is not a whole number of [6] f32 rows", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Charts derived from `runs.csv` rows: median metric vs v1 per method and,
/// when present, per-pair boxes for the grid and re-optimization rows.
pub fn render_charts(rows: &[RunRow], out: &Path) -> Result<(), HarnessError> {
    chart_files(rows)
        .into_iter()
        .try_for_each(|(name, svg)| write_file(&out.join(name), svg.as_bytes()))
}

fn chart_files(rows: &[RunRow]) -> Vec<(String, String)> {
    let summary = summarize(rows);
    // the v1 sweeps; grid and re-optimization pair rows are shown as boxes
    let swept = |m: &str| matches!(m, "darts" | "spos" | "grid-best" | "reopt-sweep");
    let mut files = Vec::new();
    let metrics: [(&str, &str, fn(&super::Summary) -> Option<f64>); 3] = [
        ("mse_vs_v1.svg", "median test Task1 loss", |s| Some(s.mse_t1)),
        ("auc_vs_v1.svg", "median test Task2 AUC", |s| Some(s.auc_t2)),
        ("validity_vs_v1.svg", "median GP validity fraction", |s| s.gp_fraction),
    ];
    for (file, label, get) in metrics {
        let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for s in summary.iter().filter(|s| swept(&s.method)) {
            if let Some(y) = get(s) {
                series.entry(&s.method).or_default().push((s.v1, y));
            }
        }
        if series.is_empty() {
            continue;
        }
        let series: Vec<(String, Vec<(f64, f64)>)> = series.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        files.push((file.to_string(), line_chart(label, "v1", label, &series, false)));
    }

    let pair_methods: Vec<&str> = ["grid", "reopt", "sequential"]
        .into_iter()
        .filter(|m| rows.iter().any(|r| r.method == *m && r.status == "ok"))
        .collect();
    if !pair_methods.is_empty() {
        let mut pairs: BTreeMap<(String, String), Vec<Vec<&RunRow>>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.status == "ok") {
            if let Some(i) = pair_methods.iter().position(|m| *m == r.method) {
                pairs
                    .entry((r.model_t1.clone(), r.model_t2.clone()))
                    .or_insert_with(|| vec![Vec::new(); pair_methods.len()])[i]
                    .push(r);
            }
        }
        let series: Vec<String> = pair_methods.iter().map(|m| m.to_string()).collect();
        for (file, label, get) in [
            ("pairs_auc.svg", "test Task2 AUC per pair", (|r: &RunRow| r.auc_t2) as fn(&RunRow) -> f64),
            ("pairs_mse.svg", "test Task1 loss per pair", |r: &RunRow| r.mse_t1),
        ] {
            let groups: Vec<(String, Vec<Vec<f64>>)> = pairs
                .iter()
                .map(|((a, b), per)| {
                    let boxes = per.iter().map(|rs| rs.iter().map(|r| get(r)).collect()).collect();
                    (format!("{a}+{b}"), boxes)
                })
                .collect();
            files.push((file.to_string(), box_chart(label, label, &series, &groups)));
        }
    }
    files
}

/// `scaling.csv`, `power_law.json` and log-log / AUC charts.
pub fn emit_scaling(report: &ScalingReport, out: &Path) -> Result<(), HarnessError> {
    if report.rows.is_empty() {
        return Err(HarnessError::NoRuns);
    }
    fs::create_dir_all(out).map_err(io(out))?;
    write_csv(&out.join("scaling.csv"), &report.rows)?;
    let json = serde_json::to_string_pretty(&report.fits).expect("fits serialize");
    write_file(&out.join("power_law.json"), json.as_bytes())?;

    let mut time: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    let mut auc: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &report.rows {
        time.entry(&r.method).or_default().push((r.n_models as f64, r.wall_time_s));
        auc.entry(&r.method).or_default().push((r.n_models as f64, r.auc_t2));
    }
    let mut series: Vec<(String, Vec<(f64, f64)>)> = time.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    for (method, fit) in &report.fits {
        let xs = [fit.x_min, fit.x_max];
        series.push((
            format!("{method} fit a={:.2}", fit.a),
            xs.iter().map(|&x| (x, fit.eval(x))).collect(),
        ));
    }
    write_file(
        &out.join("scaling.svg"),
        line_chart("search wall time", "models per task", "seconds", &series, true).as_bytes(),
    )?;
    let auc: Vec<(String, Vec<(f64, f64)>)> = auc.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    write_file(
        &out.join("scaling_auc.svg"),
        line_chart("test Task2 AUC", "models per task", "AUC", &auc, false).as_bytes(),
    )
}
