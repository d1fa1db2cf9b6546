//! Gradient aggregation rules and the Fishr variance penalty.
//!
//! The weighted geometric mean partitions clients per coordinate by
//! gradient sign and combines the two sides separately:
//!
//! ```text
//! wgm(G) = (|E+|/|E|) * (prod_{E+} |G_e|)^(1/|E+|)
//!        - (|E-|/|E|) * (prod_{E-} |G_e|)^(1/|E-|)
//! ```
//!
//! Zeros join the positive side, where they annihilate that side's
//! product, and an empty side contributes 0. Products run in log space;
//! summands are accumulated in ascending value order so the result is
//! bit-identical under any permutation of the clients.

use crate::error::{Error, Result};
use crate::nn::{self, Batch, ModelSpec, ParamVector};

/// One gradient vector per client, all the same length.
#[derive(Debug, Clone)]
pub struct GradientSet {
    grads: Vec<Vec<f64>>,
    dim: usize,
}

impl GradientSet {
    pub fn new(grads: Vec<Vec<f64>>) -> Result<Self> {
        if grads.is_empty() {
            return Err(Error::InvalidInput("empty gradient set".into()));
        }
        let dim = grads[0].len();
        for (e, g) in grads.iter().enumerate() {
            if g.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "gradient {e} has length {}, expected {dim}",
                    g.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "gradient {e} contains a non-finite value"
                )));
            }
        }
        Ok(Self { grads, dim })
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grads(&self) -> &[Vec<f64>] {
        &self.grads
    }
}

/// Sum in ascending value order; permutation-proof down to the last bit.
fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

/// Coordinatewise arithmetic mean.
pub fn arith_mean(gs: &GradientSet) -> Vec<f64> {
    let n = gs.len() as f64;
    let mut buf = Vec::with_capacity(gs.len());
    let mut out = vec![0.0; gs.dim()];
    for (k, o) in out.iter_mut().enumerate() {
        buf.clear();
        buf.extend(gs.grads().iter().map(|g| g[k]));
        *o = sorted_sum(&mut buf) / n;
    }
    out
}

/// Coordinatewise weighted geometric mean with sign partitioning.
pub fn weighted_geo_mean(gs: &GradientSet) -> Vec<f64> {
    let total = gs.len() as f64;
    let mut pos = Vec::with_capacity(gs.len());
    let mut neg = Vec::with_capacity(gs.len());
    let mut out = vec![0.0; gs.dim()];
    for (k, o) in out.iter_mut().enumerate() {
        pos.clear();
        neg.clear();
        for g in gs.grads() {
            let v = g[k];
            if v >= 0.0 {
                pos.push(v);
            } else {
                neg.push(-v);
            }
        }
        *o = geo_term(&mut pos, total) - geo_term(&mut neg, total);
    }
    out
}

/// One side of the sign partition: `(count/total) * (prod m_i)^(1/count)`
/// over magnitudes, in log space. Single-element sides skip the exp/ln
/// round trip and stay exact; `ln(0) = -inf` collapses a side containing
/// a zero.
fn geo_term(magnitudes: &mut [f64], total: f64) -> f64 {
    match magnitudes.len() {
        0 => 0.0,
        1 => magnitudes[0] / total,
        count => {
            magnitudes.sort_unstable_by(f64::total_cmp);
            let log_sum: f64 = magnitudes.iter().map(|m| m.ln()).sum();
            let count = count as f64;
            (count / total) * (log_sum / count).exp()
        }
    }
}

/// Geometric mean of absolute values; the sign-discarding baseline.
pub fn abs_geo_mean(gs: &GradientSet) -> Vec<f64> {
    let n = gs.len() as f64;
    let mut buf = Vec::with_capacity(gs.len());
    let mut out = vec![0.0; gs.dim()];
    for (k, o) in out.iter_mut().enumerate() {
        buf.clear();
        buf.extend(gs.grads().iter().map(|g| g[k].abs().ln()));
        *o = (sorted_sum(&mut buf) / n).exp();
    }
    out
}

/// Diagonal of the per-sample gradient covariance (population variance),
/// restricted to the final linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceDiag {
    pub values: Vec<f64>,
    pub sample_count: usize,
}

impl VarianceDiag {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            sample_count: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Coordinatewise population variance (divide by n) of per-sample vectors.
pub fn grad_variance_diag(per_sample: &[Vec<f64>]) -> Result<VarianceDiag> {
    if per_sample.is_empty() {
        return Err(Error::InvalidInput("no per-sample gradients".into()));
    }
    let dim = per_sample[0].len();
    if per_sample.iter().any(|g| g.len() != dim) {
        return Err(Error::ShapeMismatch(
            "per-sample gradients have mixed lengths".into(),
        ));
    }
    let n = per_sample.len() as f64;
    // mean via deviations from the first sample, so identical inputs
    // yield exact zeros downstream
    let first = &per_sample[0];
    let mut mean = vec![0.0; dim];
    for g in per_sample {
        for ((m, &v), &f) in mean.iter_mut().zip(g.iter()).zip(first.iter()) {
            *m += v - f;
        }
    }
    for (m, &f) in mean.iter_mut().zip(first.iter()) {
        *m = f + *m / n;
    }
    let mut var = vec![0.0; dim];
    for g in per_sample {
        for (c, &v) in g.iter().enumerate() {
            let d = v - mean[c];
            var[c] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v /= n;
    }
    Ok(VarianceDiag {
        values: var,
        sample_count: per_sample.len(),
    })
}

/// Mean of variance diagonals, the broadcastable `v_bar`.
pub fn mean_variance_diag(vs: &[VarianceDiag]) -> Result<VarianceDiag> {
    if vs.is_empty() {
        return Err(Error::InvalidInput("no variance diagonals".into()));
    }
    let dim = vs[0].len();
    if vs.iter().any(|v| v.len() != dim) {
        return Err(Error::ShapeMismatch(
            "variance diagonals have mixed lengths".into(),
        ));
    }
    let n = vs.len() as f64;
    let first = &vs[0].values;
    let mut mean = vec![0.0; dim];
    for v in vs {
        for ((m, &x), &f) in mean.iter_mut().zip(v.values.iter()).zip(first.iter()) {
            *m += x - f;
        }
    }
    for (m, &f) in mean.iter_mut().zip(first.iter()) {
        *m = f + *m / n;
    }
    Ok(VarianceDiag {
        values: mean,
        sample_count: vs.iter().map(|v| v.sample_count).sum(),
    })
}

/// Mean squared distance of each client's variance diagonal from the
/// cross-client mean: `(1/|E|) sum_e ||v_e - v_bar||^2`.
pub fn fishr_loss(vs: &[VarianceDiag]) -> Result<f64> {
    let mean = mean_variance_diag(vs)?;
    let n = vs.len() as f64;
    let mut total = 0.0;
    for v in vs {
        let mut sq = 0.0;
        for (&x, &m) in v.values.iter().zip(mean.values.iter()) {
            let d = x - m;
            sq += d * d;
        }
        total += sq;
    }
    Ok(total / n)
}

/// Gradient of `||v_e(w) - v_bar_prev||^2` with respect to the final
/// linear layer's parameters.
///
/// Penultimate activations are treated as constants (stop-gradient): the
/// chain rule runs only through the head logits. Using the shorthand
/// `u_i = [h_i; 1]`, per-sample head grads `g_i = r_i (x) u_i`, their mean
/// `g_bar`, variance `v`, and `d = v - v_bar_prev`:
///
/// ```text
/// dP/dtheta = (4/n) sum_i J_i^T t_i (x) u_i,
/// t_{i,j}   = sum_c d_{j,c} (g_i - g_bar)_{j,c} u_{i,c}
/// ```
///
/// where `J_i` is the head's logit Jacobian (`sigma'` for the sigmoid,
/// the softmax Jacobian otherwise).
pub fn fishr_penalty_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
    v_bar_prev: &VarianceDiag,
) -> Result<Vec<f64>> {
    let head_dim = spec.head_param_count();
    if v_bar_prev.len() != head_dim {
        return Err(Error::ShapeMismatch(format!(
            "v_bar_prev has {} entries, head has {head_dim} parameters",
            v_bar_prev.len()
        )));
    }
    let fp = nn::forward(spec, params, batch)?;
    let per = nn::head_grads_from_activations(
        params.head_block(),
        &fp.penultimate,
        fp.penult_dim,
        fp.out_dim,
        batch.labels(),
        spec.head(),
    )?;
    let var = grad_variance_diag(&per)?;

    let n = per.len();
    let h_dim = fp.penult_dim;
    let k = fp.out_dim;
    let inv_n = 1.0 / n as f64;

    let mut g_bar = vec![0.0; head_dim];
    for g in &per {
        for (m, &v) in g_bar.iter_mut().zip(g.iter()) {
            *m += v;
        }
    }
    for m in g_bar.iter_mut() {
        *m *= inv_n;
    }
    let diff: Vec<f64> = var
        .values
        .iter()
        .zip(v_bar_prev.values.iter())
        .map(|(&v, &b)| v - b)
        .collect();

    // Flat index of head coordinate (class j, input c) where c == h_dim
    // addresses the bias.
    let flat = |j: usize, c: usize| -> usize {
        if c < h_dim {
            j * h_dim + c
        } else {
            k * h_dim + j
        }
    };

    // Head logits are recomputed from the stored activations; needed for
    // the logit Jacobian.
    let (w, b) = params.head_block().split_at(k * h_dim);
    let mut out = vec![0.0; head_dim];
    let mut t = vec![0.0; k];
    let mut dz = vec![0.0; k];
    for i in 0..n {
        let h = &fp.penultimate[i * h_dim..(i + 1) * h_dim];
        let u = |c: usize| if c < h_dim { h[c] } else { 1.0 };
        for j in 0..k {
            let mut acc = 0.0;
            for c in 0..=h_dim {
                let f = flat(j, c);
                acc += diff[f] * (per[i][f] - g_bar[f]) * u(c);
            }
            t[j] = acc;
        }
        match spec.head() {
            nn::Head::SigmoidBce => {
                let z = b[0] + w.iter().zip(h.iter()).map(|(w, x)| w * x).sum::<f64>();
                let s = nn::sigmoid(z);
                dz[0] = s * (1.0 - s) * t[0];
            }
            nn::Head::SoftmaxCe => {
                let mut logits = vec![0.0; k];
                for (j, l) in logits.iter_mut().enumerate() {
                    let w_row = &w[j * h_dim..(j + 1) * h_dim];
                    *l = b[j] + w_row.iter().zip(h.iter()).map(|(w, x)| w * x).sum::<f64>();
                }
                let p = nn::softmax_row(&logits);
                let dot: f64 = t.iter().zip(p.iter()).map(|(t, p)| t * p).sum();
                for j in 0..k {
                    dz[j] = p[j] * (t[j] - dot);
                }
            }
        }
        let scale = 4.0 * inv_n;
        for j in 0..k {
            for c in 0..=h_dim {
                out[flat(j, c)] += scale * dz[j] * u(c);
            }
        }
    }
    Ok(out)
}
