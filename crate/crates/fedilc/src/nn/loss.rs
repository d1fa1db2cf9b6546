//! Loss heads and the numerically stable scalar pieces they share.

use crate::error::{Error, Result};
use crate::nn::Head;

/// `ln(1 + exp(x))` without overflow for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sum(exp(row)))` with the shift-by-max trick.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Softmax of one logit row.
pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Loss of a single sample given its logit row.
pub(crate) fn sample_loss(row: &[f64], label: u32, head: Head) -> f64 {
    match head {
        // BCE(z, y) = y*softplus(-z) + (1-y)*softplus(z)
        Head::SigmoidBce => {
            if label == 1 {
                softplus(-row[0])
            } else {
                softplus(row[0])
            }
        }
        Head::SoftmaxCe => log_sum_exp(row) - row[label as usize],
    }
}

/// Mean loss over a batch of logits.
///
/// For the sigmoid head `logits` holds one value per sample and labels are
/// {0, 1}; the BCE is evaluated in softplus form so large logits stay
/// finite. For the softmax head `logits` is row-major `n x k` and labels
/// are class indices.
pub fn compute_loss(logits: &[f64], labels: &[u32], head: Head) -> Result<f64> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::InvalidInput("no samples".into()));
    }
    if !logits.len().is_multiple_of(n) {
        return Err(Error::ShapeMismatch(format!(
            "{} logits do not divide into {n} samples",
            logits.len()
        )));
    }
    let k = logits.len() / n;
    if head == Head::SigmoidBce && k != 1 {
        return Err(Error::ShapeMismatch(format!(
            "sigmoid head expects 1 logit per sample, got {k}"
        )));
    }
    let limit = if head == Head::SigmoidBce { 2 } else { k as u32 };
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= limit {
            return Err(Error::InvalidInput(format!(
                "label {y} out of range for this head"
            )));
        }
        total += sample_loss(&logits[i * k..(i + 1) * k], y, head);
    }
    Ok(total / n as f64)
}
