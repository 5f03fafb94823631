//! Exact Gaussian-process regression used as a reference predictor for the
//! Task1 outputs, and the two-sigma validity fraction built on it.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::Prepared;
use crate::seed::derived_rng;

pub const GP_FORMAT_VERSION: u32 = 1;

/// Names of the six Task1 scalars, in output column order.
pub const VARIABLES: [&str; 6] = ["pt1", "eta1", "phi1", "pt2", "eta2", "phi2"];

// log-hyperparameters are kept inside this box during optimisation
const LOG_MIN: f64 = -18.0;
const LOG_MAX: f64 = 10.0;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("kernel matrix is not positive definite even with jitter {jitter:e}")]
    Cholesky { jitter: f64 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid gp config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    /// Training points kept after random subsampling.
    pub max_points: usize,
    /// Adam steps of gradient ascent on the log marginal likelihood.
    pub steps: usize,
    pub learning_rate: f64,
    pub jitter: f64,
    /// Largest diagonal jitter tried before giving up.
    pub max_jitter: f64,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            max_points: 400,
            steps: 200,
            learning_rate: 0.05,
            jitter: 1e-6,
            max_jitter: 1e-3,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), GpError> {
        if self.max_points == 0 || self.max_points > 2000 {
            return Err(GpError::Config(format!("max_points = {} outside 1..=2000", self.max_points)));
        }
        if !(self.jitter > 0.0 && self.max_jitter >= self.jitter) || !(self.learning_rate > 0.0) {
            return Err(GpError::Config("jitter and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// RBF kernel with one length scale per input dimension, plus noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub signal_variance: f64,
    pub length_scales: Vec<f64>,
    pub noise_variance: f64,
}

impl Hyperparameters {
    fn to_log(&self) -> Vec<f64> {
        let mut t = vec![self.signal_variance.ln()];
        t.extend(self.length_scales.iter().map(|l| l.ln()));
        t.push(self.noise_variance.ln());
        t
    }

    fn from_log(t: &[f64]) -> Self {
        let d = t.len() - 2;
        Self {
            signal_variance: t[0].exp(),
            length_scales: t[1..=d].iter().map(|v| v.exp()).collect(),
            noise_variance: t[d + 1].exp(),
        }
    }

    fn validate(&self, dim: usize) -> Result<(), GpError> {
        if self.length_scales.len() != dim {
            return Err(GpError::Shape(format!(
                "{} length scales for {dim} input dimensions",
                self.length_scales.len()
            )));
        }
        let all = std::iter::once(self.signal_variance)
            .chain(self.length_scales.iter().copied())
            .chain(std::iter::once(self.noise_variance));
        for v in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GpError::Config(format!("hyperparameter {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// A fitted GP: hyperparameters, training subsample and the Cholesky factor
/// of `K + (σ_n² + jitter)·I`.
#[derive(Debug, Clone)]
pub struct GpModel {
    hyper: Hyperparameters,
    /// Constant prior mean (the training target mean).
    mean: f64,
    jitter: f64,
    dim: usize,
    /// Rows of the caller's training set that were kept.
    indices: Vec<usize>,
    x: DMatrix<f64>,
    y: Vec<f64>,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

fn check_finite(values: &[f64], what: &str) -> Result<(), GpError> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(GpError::NonFinite(format!("{what} contains {v}"))),
        None => Ok(()),
    }
}

fn signal_kernel(x: &DMatrix<f64>, h: &Hyperparameters) -> DMatrix<f64> {
    let n = x.nrows();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = h.signal_variance;
        for j in 0..i {
            let v = h.signal_variance * (-0.5 * scaled_sq_dist(x, i, x, j, &h.length_scales)).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn scaled_sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize, ls: &[f64]) -> f64 {
    ls.iter()
        .enumerate()
        .map(|(d, l)| {
            let z = (a[(i, d)] - b[(j, d)]) / l;
            z * z
        })
        .sum()
}

/// Cholesky of `k + noise·I`, adding jitter ×10 until it succeeds.
fn factor(
    k: &DMatrix<f64>,
    noise: f64,
    jitter: f64,
    max_jitter: f64,
) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let mut j = jitter;
    loop {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += noise + j;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, j));
        }
        if j >= max_jitter {
            return Err(GpError::Cholesky { jitter: j });
        }
        j = (j * 10.0).min(max_jitter);
    }
}

/// Log marginal likelihood of centred targets and its gradient with respect
/// to the log-hyperparameters.
fn lml_and_grad(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &[f64],
    jitter: f64,
    max_jitter: f64,
) -> Result<(f64, Vec<f64>), GpError> {
    let h = Hyperparameters::from_log(theta);
    let n = x.nrows();
    let kf = signal_kernel(x, &h);
    let (chol, _) = factor(&kf, h.noise_variance, jitter, max_jitter)?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    // W = ααᵀ − K⁻¹, dL/dθ = ½ tr(W ∂K/∂θ)
    let w = &alpha * alpha.transpose() - chol.inverse();
    let d = h.length_scales.len();
    let mut grad = vec![0.0; d + 2];
    for i in 0..n {
        for j in 0..n {
            let wk = w[(i, j)] * kf[(i, j)];
            grad[0] += wk;
            for (dim, l) in h.length_scales.iter().enumerate() {
                let z = (x[(i, dim)] - x[(j, dim)]) / l;
                grad[1 + dim] += wk * z * z;
            }
        }
    }
    grad[d + 1] = h.noise_variance * w.trace();
    for g in &mut grad {
        *g *= 0.5;
    }
    Ok((lml, grad))
}

impl GpModel {
    /// Subsamples at most `cfg.max_points` rows, then maximises the log
    /// marginal likelihood by Adam ascent. `inputs` is row-major `[n, dim]`.
    pub fn fit(inputs: &[f64], dim: usize, targets: &[f64], cfg: &GpConfig) -> Result<Self, GpError> {
        cfg.validate()?;
        let n = check_layout(inputs, dim, targets)?;
        let mut indices: Vec<usize> = if n > cfg.max_points {
            sample(&mut derived_rng(cfg.seed, "gp/subsample"), n, cfg.max_points).into_vec()
        } else {
            (0..n).collect()
        };
        indices.sort_unstable();
        let (x, y) = gather(inputs, dim, targets, &indices);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - mean));

        let var = (yc.dot(&yc) / y.len() as f64).max(1e-6);
        let init = Hyperparameters {
            signal_variance: var,
            length_scales: (0..dim).map(|d| column_std(&x, d).max(1e-3)).collect(),
            noise_variance: 0.1 * var,
        };
        let mut theta = init.to_log();
        let (mut m, mut v) = (vec![0.0; theta.len()], vec![0.0; theta.len()]);
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        for t in 1..=cfg.steps {
            let (_, grad) = lml_and_grad(&x, &yc, &theta, cfg.jitter, cfg.max_jitter)?;
            check_finite(&grad, "likelihood gradient")?;
            for k in 0..theta.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
                v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
                let mh = m[k] / (1.0 - b1.powi(t as i32));
                let vh = v[k] / (1.0 - b2.powi(t as i32));
                // ascent
                theta[k] = (theta[k] + cfg.learning_rate * mh / (vh.sqrt() + eps)).clamp(LOG_MIN, LOG_MAX);
            }
        }
        Self::assemble(Hyperparameters::from_log(&theta), mean, x, y, indices, cfg.jitter, cfg.max_jitter)
    }

    /// Conditions on all rows with fixed hyperparameters and the target mean
    /// as prior mean.
    pub fn with_hyperparameters(
        inputs: &[f64],
        dim: usize,
        targets: &[f64],
        hyper: Hyperparameters,
        jitter: f64,
    ) -> Result<Self, GpError> {
        let n = check_layout(inputs, dim, targets)?;
        hyper.validate(dim)?;
        let indices: Vec<usize> = (0..n).collect();
        let (x, y) = gather(inputs, dim, targets, &indices);
        let mean = y.iter().sum::<f64>() / n as f64;
        Self::assemble(hyper, mean, x, y, indices, jitter, 1e-3_f64.max(jitter))
    }

    fn assemble(
        hyper: Hyperparameters,
        mean: f64,
        x: DMatrix<f64>,
        y: Vec<f64>,
        indices: Vec<usize>,
        jitter: f64,
        max_jitter: f64,
    ) -> Result<Self, GpError> {
        let kf = signal_kernel(&x, &hyper);
        let (chol, used) = factor(&kf, hyper.noise_variance, jitter, max_jitter)?;
        let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - mean));
        let alpha = chol.solve(&yc);
        Ok(Self {
            dim: x.ncols(),
            hyper,
            mean,
            jitter: used,
            indices,
            x,
            y,
            chol: chol.l(),
            alpha,
        })
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    /// Diagonal jitter that made the kernel matrix factorise.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.hyper.length_scales)
            .map(|((p, q), l)| ((p - q) / l).powi(2))
            .sum();
        self.hyper.signal_variance * (-0.5 * d2).exp()
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let yc = DVector::from_iterator(self.y.len(), self.y.iter().map(|v| v - self.mean));
        let log_det: f64 = self.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        -0.5 * yc.dot(&self.alpha) - 0.5 * log_det - 0.5 * self.y.len() as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Posterior mean and predictive variance (including the noise term).
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64), GpError> {
        if x.len() != self.dim {
            return Err(GpError::Shape(format!("query has {} features, model {}", x.len(), self.dim)));
        }
        check_finite(x, "query point")?;
        let n = self.x.nrows();
        let ks = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let row: Vec<f64> = (0..self.dim).map(|d| self.x[(i, d)]).collect();
                self.kernel(&row, x)
            }),
        );
        let mean = self.mean + ks.dot(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&ks)
            .expect("cholesky factor has a positive diagonal");
        let var = (self.hyper.signal_variance - v.dot(&v)).max(0.0) + self.hyper.noise_variance;
        Ok((mean, var))
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = GpHeader {
            format_version: GP_FORMAT_VERSION,
            hyperparameters: self.hyper.clone(),
            mean: self.mean,
            jitter: self.jitter,
            dim: self.dim,
            indices: self.indices.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let n = self.y.len();
        // inputs row-major, targets, factor row-major
        for i in 0..n {
            for d in 0..self.dim {
                out.extend_from_slice(&self.x[(i, d)].to_le_bytes());
            }
        }
        for v in &self.y {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for i in 0..n {
            for j in 0..n {
                out.extend_from_slice(&self.chol[(i, j)].to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self, GpError> {
        let fail = |detail: String| GpError::Format {
            path: path.to_path_buf(),
            detail,
        };
        if bytes.len() < 8 {
            return Err(fail("truncated header".into()));
        }
        let hl = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        if bytes.len() < 8 + hl {
            return Err(fail("truncated header".into()));
        }
        let header: GpHeader = serde_json::from_slice(&bytes[8..8 + hl]).map_err(|e| fail(format!("bad header: {e}")))?;
        if header.format_version != GP_FORMAT_VERSION {
            return Err(fail(format!("unsupported format version {}", header.format_version)));
        }
        let (n, d) = (header.indices.len(), header.dim);
        let payload = &bytes[8 + hl..];
        let expected = 8 * (n * d + n + n * n);
        if payload.len() != expected {
            return Err(fail(format!("payload has {} bytes, expected {expected}", payload.len())));
        }
        let vals: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let x = DMatrix::from_row_slice(n, d, &vals[..n * d]);
        let y = vals[n * d..n * d + n].to_vec();
        let chol = DMatrix::from_row_slice(n, n, &vals[n * d + n..]);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - header.mean));
        let z = chol
            .solve_lower_triangular(&yc)
            .ok_or_else(|| fail("singular factor".into()))?;
        let alpha = chol
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| fail("singular factor".into()))?;
        Ok(Self {
            hyper: header.hyperparameters,
            mean: header.mean,
            jitter: header.jitter,
            dim: d,
            indices: header.indices,
            x,
            y,
            chol,
            alpha,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), GpError> {
        fs::write(path, self.encode()).map_err(|source| GpError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GpError> {
        let bytes = fs::read(path).map_err(|source| GpError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes, path)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GpHeader {
    format_version: u32,
    hyperparameters: Hyperparameters,
    mean: f64,
    jitter: f64,
    dim: usize,
    indices: Vec<usize>,
}

fn check_layout(inputs: &[f64], dim: usize, targets: &[f64]) -> Result<usize, GpError> {
    let n = targets.len();
    if dim == 0 || n == 0 || inputs.len() != n * dim {
        return Err(GpError::Shape(format!(
            "{} inputs for {n} targets of dimension {dim}",
            inputs.len()
        )));
    }
    check_finite(inputs, "inputs")?;
    check_finite(targets, "targets")?;
    Ok(n)
}

fn gather(inputs: &[f64], dim: usize, targets: &[f64], rows: &[usize]) -> (DMatrix<f64>, Vec<f64>) {
    let x = DMatrix::from_fn(rows.len(), dim, |i, d| inputs[rows[i] * dim + d]);
    (x, rows.iter().map(|&r| targets[r]).collect())
}

fn column_std(x: &DMatrix<f64>, d: usize) -> f64 {
    let col = x.column(d);
    let m = col.mean();
    (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt()
}

/// Per-variable fraction of predictions within two predictive standard
/// deviations of the GP mean; `overall` is the mean of the six.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub fractions: [f64; 6],
    pub overall: f64,
}

/// `predictions`, `means` and `variances` are all `[n, 6]`.
pub fn validity_fraction(predictions: &[f32], means: &[f64], variances: &[f64]) -> Result<ValidityReport, GpError> {
    if predictions.len() != means.len() || means.len() != variances.len() || means.len() % 6 != 0 || means.is_empty() {
        return Err(GpError::Shape(format!(
            "{} predictions, {} means, {} variances",
            predictions.len(),
            means.len(),
            variances.len()
        )));
    }
    let n = means.len() / 6;
    let mut fractions = [0.0; 6];
    for (c, f) in fractions.iter_mut().enumerate() {
        let inside = (0..n)
            .filter(|&i| {
                let k = 6 * i + c;
                (predictions[k] as f64 - means[k]).abs() <= 2.0 * variances[k].sqrt()
            })
            .count();
        *f = inside as f64 / n as f64;
    }
    Ok(ValidityReport {
        fractions,
        overall: fractions.iter().sum::<f64>() / 6.0,
    })
}

/// Six independent GPs, one per Task1 scalar, each on the normalized jet
/// four-vector of its own candidate.
#[derive(Debug, Clone)]
pub struct GpSet {
    pub models: Vec<GpModel>,
}

fn candidate_inputs(data: &Prepared, k: usize) -> Vec<f64> {
    let jets = data.jets();
    (0..data.len())
        .flat_map(|i| jets[4 * (2 * i + k)..4 * (2 * i + k) + 4].iter().map(|&v| v as f64))
        .collect()
}

impl GpSet {
    pub fn fit(train: &Prepared, cfg: &GpConfig) -> Result<Self, GpError> {
        let truth = train.truth();
        let mut models = Vec::with_capacity(6);
        for c in 0..6 {
            let x = candidate_inputs(train, c / 3);
            let y: Vec<f64> = (0..train.len()).map(|i| truth[6 * i + c] as f64).collect();
            log::debug!("fitting gp for {}", VARIABLES[c]);
            models.push(GpModel::fit(&x, 4, &y, cfg)?);
        }
        Ok(Self { models })
    }

    /// GP means and variances `[n, 6]` on every event of `data`.
    pub fn predict(&self, data: &Prepared) -> Result<(Vec<f64>, Vec<f64>), GpError> {
        let n = data.len();
        let mut means = vec![0.0; 6 * n];
        let mut vars = vec![0.0; 6 * n];
        for (c, gp) in self.models.iter().enumerate() {
            let x = candidate_inputs(data, c / 3);
            for i in 0..n {
                let (m, v) = gp.predict(&x[4 * i..4 * i + 4])?;
                means[6 * i + c] = m;
                vars[6 * i + c] = v;
            }
        }
        Ok((means, vars))
    }

    /// Validity of Task1 `predictions` (`[n, 6]`) on `data`.
    pub fn validity(&self, predictions: &[f32], data: &Prepared) -> Result<ValidityReport, GpError> {
        let (m, v) = self.predict(data)?;
        validity_fraction(predictions, &m, &v)
    }

    pub fn save(&self, dir: &Path) -> Result<(), GpError> {
        fs::create_dir_all(dir).map_err(|source| GpError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for (gp, name) in self.models.iter().zip(VARIABLES) {
            gp.save(&dir.join(format!("gp_{name}.bin")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, GpError> {
        let models = VARIABLES
            .iter()
            .map(|name| GpModel::load(&dir.join(format!("gp_{name}.bin"))))
            .collect::<Result<_, _>>()?;
        Ok(Self { models })
    }
}
