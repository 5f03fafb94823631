use crate::autodiff::{Graph, Scalar, Var};

use super::PipelineError;

pub const TASK1_SCALE: f64 = 1e-4;

/// Squared calibration error in `(pt [GeV], eta, phi)` space, summed over
/// both taus, averaged over events and scaled by 1e-4. Inputs are `[B, 6]`
/// in normalized space.
pub fn loss_task1<T: Scalar>(g: &Graph<T>, pred: Var, truth: Var) -> Result<Var, PipelineError> {
    let (ps, ts) = (g.shape(pred), g.shape(truth));
    if ps != ts || ps.len() != 2 || ps[1] != 6 {
        return Err(PipelineError::Shape(format!("task1 loss: pred {ps:?} vs truth {ts:?}")));
    }
    let events = ps[0];
    let mut terms = Vec::with_capacity(4);
    for k in 0..2 {
        let physical_pt = |v: Var| -> Result<Var, PipelineError> {
            Ok(g.affine(g.exp(g.slice(v, 1, 3 * k, 1)?)?, T::one(), T::from_f64(-0.1))?)
        };
        let d_pt = g.sub(physical_pt(pred)?, physical_pt(truth)?)?;
        let d_ang = g.sub(g.slice(pred, 1, 3 * k + 1, 2)?, g.slice(truth, 1, 3 * k + 1, 2)?)?;
        terms.push(g.sum(g.square(d_pt)?)?);
        terms.push(g.sum(g.square(d_ang)?)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(g.scale(total, T::from_f64(TASK1_SCALE / events as f64))?)
}

/// Mean binary cross-entropy on logits, `max(y,0) − y·t + log(1+e^{−|y|})`.
pub fn loss_task2<T: Scalar>(g: &Graph<T>, logits: Var, targets: Var) -> Result<Var, PipelineError> {
    let (ls, ts) = (g.shape(logits), g.shape(targets));
    if ls != ts {
        return Err(PipelineError::Shape(format!("task2 loss: logits {ls:?} vs targets {ts:?}")));
    }
    if let Some(&bad) = g.value(targets).data().iter().find(|&&t| t != T::zero() && t != T::one()) {
        return Err(PipelineError::InvalidTarget(bad.as_f64()));
    }
    let per_event = g.sub(g.softplus(logits)?, g.mul(logits, targets)?)?;
    Ok(g.mean(per_event)?)
}

/// Softmax-weighted sum of candidate outputs. `alpha` has one entry per
/// output.
pub fn aggregate<T: Scalar>(g: &Graph<T>, outputs: &[Var], alpha: Var) -> Result<Var, PipelineError> {
    let n = g.shape(alpha).iter().product::<usize>();
    if outputs.is_empty() || n != outputs.len() {
        return Err(PipelineError::Shape(format!(
            "aggregate: {} outputs for {} architecture weights",
            outputs.len(),
            n
        )));
    }
    let flat = g.reshape(alpha, &[n])?;
    let w = g.softmax(flat, 0)?;
    let mut acc = None;
    for (j, &y) in outputs.iter().enumerate() {
        let term = g.scale_by(y, g.slice(w, 0, j, 1)?)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    Ok(acc.expect("non-empty"))
}

/// Numerically stable softmax of plain values.
pub fn softmax_values(alpha: &[f64]) -> Vec<f64> {
    let max = alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = alpha.iter().map(|a| (a - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}
