use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::error::AutodiffError;
use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Elements probed per parameter; larger tensors are subsampled.
    pub max_elements_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_elements_per_param: usize::MAX,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients of `loss` with 64-bit central differences.
///
/// `loss` is rebuilt from scratch for every probe, so it must be a pure
/// function of the store.
pub fn finite_difference_check<F, E>(
    store: &ParamStore<f64>,
    params: &[ParamId],
    options: GradCheckOptions,
    mut loss: F,
) -> Result<GradCheckReport, E>
where
    F: FnMut(&Graph<f64>, &ParamStore<f64>) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let graph = Graph::new();
    let out = loss(&graph, store)?;
    let grads = graph.gradients(out)?;
    drop(graph);

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut probe = store.clone();
    let mut eval = |probe: &ParamStore<f64>| -> Result<f64, E> {
        let g = Graph::new();
        let v = loss(&g, probe)?;
        Ok(g.scalar(v))
    };

    let mut report = Vec::with_capacity(params.len());
    for &id in params {
        let analytic = grads.get_or_zero(id, store);
        let n = analytic.len();
        let picks: Vec<usize> = if n <= options.max_elements_per_param {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, options.max_elements_per_param).into_vec();
            v.sort_unstable();
            v
        };
        let mut worst = 0.0f64;
        for &i in &picks {
            let original = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = original + options.step;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = original - options.step;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * options.step);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
        report.push(ParamCheck {
            name: store.name(id).to_string(),
            checked: picks.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport { params: report })
}
