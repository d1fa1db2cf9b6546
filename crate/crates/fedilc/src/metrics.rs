//! Evaluation metrics: ranking areas, accuracy, and fairness statistics.

use crate::error::{Error, Result};

/// Evaluation summary for one dataset.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub loss: f64,
    pub accuracy: f64,
    /// Binary tasks only; NaN otherwise.
    pub auroc: f64,
    /// Binary tasks only; NaN otherwise.
    pub auprc: f64,
    pub per_silo_accuracy: Vec<f64>,
    pub per_subenv_accuracy: Option<Vec<(usize, u32, f64)>>,
}

/// Probability that a random positive outranks a random negative, ties
/// counted half (the Mann-Whitney estimator).
pub fn auroc(scores: &[f64], labels: &[u32]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput(
            "auroc needs both classes present".into(),
        ));
    }
    // average ranks over tied groups, then the rank-sum identity
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j share the average rank
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Area under precision-recall by step-wise summation
/// `sum (R_k - R_{k-1}) * P_k` over descending-score thresholds,
/// tied scores grouped into one threshold.
pub fn auprc(scores: &[f64], labels: &[u32]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 {
        return Err(Error::InvalidInput("auprc needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut recall_prev = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - recall_prev) * precision;
        recall_prev = recall;
        i = j;
    }
    Ok(area)
}

/// Fraction of correct binary predictions at the 0.5 probability
/// threshold (logit >= 0).
pub fn binary_accuracy(logits: &[f64], labels: &[u32]) -> f64 {
    let correct = logits
        .iter()
        .zip(labels.iter())
        .filter(|(&z, &y)| (z >= 0.0) == (y == 1))
        .count();
    correct as f64 / labels.len() as f64
}

/// Argmax accuracy over row-major `n x k` logits; first maximum wins ties.
pub fn multiclass_accuracy(logits: &[f64], k: usize, labels: &[u32]) -> f64 {
    let n = labels.len();
    let mut correct = 0;
    for i in 0..n {
        let row = &logits[i * k..(i + 1) * k];
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best as u32 == labels[i] {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}

/// Dispersion of per-silo accuracies: population variance, and the KL
/// divergence of the normalized accuracy vector from uniform
/// (`sum p_i ln(p_i K)`, with `0 ln 0 = 0`).
pub fn fairness_stats(per_silo_accuracy: &[f64]) -> Result<(f64, f64)> {
    let k = per_silo_accuracy.len();
    if k < 2 {
        return Err(Error::InvalidInput(
            "fairness stats need at least 2 silos".into(),
        ));
    }
    if per_silo_accuracy.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
        return Err(Error::InvalidInput("accuracies must lie in [0, 1]".into()));
    }
    // degenerate uniform case is exactly (0, 0)
    if per_silo_accuracy.iter().all(|&a| a == per_silo_accuracy[0]) {
        if per_silo_accuracy[0] == 0.0 {
            return Err(Error::InvalidInput(
                "cannot normalize an all-zero accuracy vector".into(),
            ));
        }
        return Ok((0.0, 0.0));
    }
    let n = k as f64;
    let mean = per_silo_accuracy.iter().sum::<f64>() / n;
    let variance = per_silo_accuracy
        .iter()
        .map(|&a| (a - mean) * (a - mean))
        .sum::<f64>()
        / n;
    let total: f64 = per_silo_accuracy.iter().sum();
    if total == 0.0 {
        return Err(Error::InvalidInput(
            "cannot normalize an all-zero accuracy vector".into(),
        ));
    }
    let kl = per_silo_accuracy
        .iter()
        .map(|&a| {
            let p = a / total;
            if p > 0.0 {
                p * (p * n).ln()
            } else {
                0.0
            }
        })
        .sum();
    Ok((variance, kl))
}

/// Shannon entropy of the normalized accuracy vector, `ln K - KL`.
pub fn accuracy_entropy(per_silo_accuracy: &[f64]) -> Result<f64> {
    let (_, kl) = fairness_stats(per_silo_accuracy)?;
    Ok((per_silo_accuracy.len() as f64).ln() - kl)
}

/// Mean and sample (n-1) standard deviation across seeds.
pub fn seed_summary(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidInput(
            "seed summary needs at least 2 values".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}
