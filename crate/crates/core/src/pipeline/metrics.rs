use super::PipelineError;

/// Area under the ROC curve by the Mann–Whitney rank statistic, with
/// average ranks for tied scores. Labels are 0 or 1.
pub fn auc(scores: &[f64], labels: &[f32]) -> Result<f64, PipelineError> {
    if scores.len() != labels.len() {
        return Err(PipelineError::Shape(format!(
            "auc: {} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(PipelineError::Metric(format!("auc: score {s} is not a number")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    let n_neg = labels.iter().filter(|&&l| l == 0.0).count();
    if n_pos + n_neg != labels.len() {
        return Err(PipelineError::Metric("auc: labels must be 0 or 1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(PipelineError::Metric("auc: need both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1.0).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Index of the largest value, lowest index on ties.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.map_or(true, |b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Index of the smallest value, lowest index on ties.
pub fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.map_or(true, |b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
