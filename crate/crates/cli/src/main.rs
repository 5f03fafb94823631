use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use msnas_core::datagen::{generate_dataset, load_dataset, Split};
use msnas_core::gp::{validity_fraction, GpSet, VARIABLES};
use msnas_core::harness::{
    emit_report, emit_scaling, read_predictions, read_runs, render_charts, reopt_study, run_method_experiment,
    scaling_experiment, summarize, ExperimentConfig, HarnessError, RunReport, RunRow, Study, Workspace,
};
use msnas_core::pipeline::Prepared;

#[derive(Parser)]
#[command(name = "msnas", version, about = "Model selection experiments for a two-step tau pipeline")]
struct Cli {
    /// JSON experiment configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Darts,
    Spos,
    Grid,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long)]
        n_events: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Model selection runs for every seed and v1.
    Run {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        v1: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Include Zeros and Noise candidates (DARTS only).
        #[arg(long)]
        dummies: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid training with and without re-optimization, plus a v1 sweep.
    Reopt {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',')]
        v1: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search wall time against the number of candidate models.
    Scaling {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        replicas: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// GP validity of a finished run's test predictions.
    Gp {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        run: String,
        /// Report directory holding the run's predictions.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render charts and print medians from an existing runs.csv.
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Data(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Run(_) => 4,
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) => Failure::Config(e.to_string()),
            HarnessError::Data(_) => Failure::Data(e.to_string()),
            _ => Failure::Run(e.to_string()),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn print_summary(rows: &[RunRow]) {
    println!("{:<16} {:>5} {:>5} {:>10} {:>8} {:>8}", "method", "v1", "runs", "mse_t1", "auc_t2", "gp");
    for s in summarize(rows) {
        let gp = s.gp_fraction.map_or("-".to_string(), |g| format!("{g:.4}"));
        println!(
            "{:<16} {:>5} {:>5} {:>10.5} {:>8.4} {:>8}",
            s.method, s.v1, s.runs, s.mse_t1, s.auc_t2, gp
        );
    }
}

fn finish_runs(rows: Vec<RunReport>, cfg: &ExperimentConfig) -> Result<(), Failure> {
    emit_report(&rows, &cfg.out)?;
    let table: Vec<RunRow> = rows.iter().map(RunRow::from).collect();
    print_summary(&table);
    let failed: Vec<&RunReport> = rows.iter().filter(|r| !r.is_ok()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        for r in &failed {
            eprintln!("run {} (seed {}, v1 {}): {}", r.run_id, r.seed, r.v1, r.status);
        }
        Err(Failure::Run(format!("{} of {} runs failed", failed.len(), rows.len())))
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Gen { n_events, seed, out } => {
            set(&mut cfg.generator.n_events, n_events);
            set(&mut cfg.generator.seed, seed);
            set(&mut cfg.data, out);
            let ds = generate_dataset(&cfg.generator, &cfg.data).map_err(|e| Failure::Data(e.to_string()))?;
            println!("{} events written to {} (checksum {})", ds.len(), cfg.data.display(), ds.meta.checksum);
        }
        Command::Run {
            method,
            data,
            v1,
            seeds,
            dummies,
            out,
        } => {
            if let Some(m) = method {
                cfg.method = match m {
                    MethodArg::Darts => Study::Darts,
                    MethodArg::Spos => Study::Spos,
                    MethodArg::Grid => Study::Grid,
                };
            }
            set(&mut cfg.data, data);
            set(&mut cfg.v1, v1);
            set(&mut cfg.seeds, seeds);
            set(&mut cfg.out, out);
            cfg.dummies |= dummies;
            if cfg.dummies && cfg.method != Study::Darts {
                return Err(Failure::Config("--dummies applies to darts only".into()));
            }
            cfg.validate()?;
            let ws = Workspace::load(&cfg)?;
            let rows = run_method_experiment(&cfg, &ws)?;
            finish_runs(rows, &cfg)?;
        }
        Command::Reopt { data, seeds, v1, out } => {
            cfg.method = Study::ReoptStudy;
            cfg.dummies = false;
            set(&mut cfg.data, data);
            set(&mut cfg.seeds, seeds);
            set(&mut cfg.v1, v1);
            set(&mut cfg.out, out);
            cfg.validate()?;
            let ws = Workspace::load(&cfg)?;
            let rows = reopt_study(&cfg, &ws)?;
            finish_runs(rows, &cfg)?;
        }
        Command::Scaling { data, replicas, out } => {
            cfg.method = Study::Scaling;
            set(&mut cfg.data, data);
            set(&mut cfg.replicas, replicas);
            set(&mut cfg.out, out);
            cfg.validate()?;
            let ws = Workspace::load(&cfg)?;
            let report = scaling_experiment(&cfg, &ws)?;
            emit_scaling(&report, &cfg.out)?;
            for (method, fit) in &report.fits {
                println!("{method:<14} time = {:.4e} * n^{:.3}  (log residual {:.3e})", fit.c, fit.a, fit.residual);
            }
        }
        Command::Gp { data, run, out } => {
            cfg.method = Study::GpValidity;
            set(&mut cfg.data, data);
            set(&mut cfg.out, out);
            cfg.gp.validate().map_err(|e| Failure::Config(e.to_string()))?;
            let ds = load_dataset(&cfg.data).map_err(|e| Failure::Data(e.to_string()))?;
            let prep = |split| Prepared::from_dataset(&ds, split).map_err(|e| Failure::Data(e.to_string()));
            let (train, test) = (prep(Split::Train)?, prep(Split::Test)?);
            let preds = read_predictions(&cfg.out, &run)?;
            let gp = GpSet::fit(&train, &cfg.gp).map_err(|e| Failure::Run(e.to_string()))?;
            let (means, vars) = gp.predict(&test).map_err(|e| Failure::Run(e.to_string()))?;
            let report = validity_fraction(&preds, &means, &vars).map_err(|e| Failure::Data(e.to_string()))?;
            for (name, f) in VARIABLES.iter().zip(report.fractions) {
                println!("{name:<6} {f:.4}");
            }
            println!("{:<6} {:.4}", "all", report.overall);
        }
        Command::Report { out } => {
            set(&mut cfg.out, out);
            let rows = read_runs(&cfg.out)?;
            render_charts(&rows, &cfg.out)?;
            print_summary(&rows);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(m) | Failure::Data(m) | Failure::Run(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
