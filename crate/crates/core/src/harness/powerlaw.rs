use serde::{Deserialize, Serialize};

use super::HarnessError;

/// `y = c · x^a` fitted by least squares on `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub c: f64,
    pub a: f64,
    /// Sum of squared log-space residuals.
    pub residual: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl PowerLawFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.c * x.powf(self.a)
    }
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit, HarnessError> {
    if points.len() < 2 {
        return Err(HarnessError::Fit(format!("need at least 2 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.0 > 0.0 && p.1 > 0.0) || !p.0.is_finite() || !p.1.is_finite()) {
        return Err(HarnessError::Fit(format!("non-positive coordinate {p:?}")));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-24 {
        return Err(HarnessError::Fit("all x values coincide".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let residual = lx.iter().zip(&ly).map(|(x, y)| (y - (a * x + b)).powi(2)).sum();
    let xs = points.iter().map(|p| p.0);
    Ok(PowerLawFit {
        c: b.exp(),
        a,
        residual,
        x_min: xs.clone().fold(f64::INFINITY, f64::min),
        x_max: xs.fold(f64::NEG_INFINITY, f64::max),
    })
}
