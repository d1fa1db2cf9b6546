//! Batched forward pass.

use crate::error::{Error, Result};
use crate::nn::{Batch, ModelSpec, ParamVector};

/// Output of [`forward`]: pre-head logits plus the penultimate-layer
/// activation each sample produced (the final layer's input, needed for
/// per-sample head gradients).
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Vec<f64>,
    pub penultimate: Vec<f64>,
    pub n: usize,
    pub out_dim: usize,
    pub penult_dim: usize,
}

/// Dot product with eight independent accumulators so the compiler can
/// vectorize; the summation order is fixed, keeping results bit-stable.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let av = &a[c * 8..c * 8 + 8];
        let bv = &b[c * 8..c * 8 + 8];
        for k in 0..8 {
            acc[k] += av[k] * bv[k];
        }
    }
    let mut tail = 0.0;
    for k in chunks * 8..a.len() {
        tail += a[k] * b[k];
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
}

/// One dense layer over a row-major activation matrix.
/// `relu` applies the hidden activation after the affine map.
///
/// Samples are tiled so each weight row is read once per tile instead of
/// once per sample; big weight matrices would otherwise stream from
/// memory for every row. The per-element arithmetic is unchanged.
fn dense_layer(
    input: &[f64],
    n: usize,
    in_dim: usize,
    out_dim: usize,
    weights: &[f64],
    bias: &[f64],
    relu: bool,
) -> Vec<f64> {
    const TILE: usize = 64;
    let mut out = vec![0.0; n * out_dim];
    for tile_start in (0..n).step_by(TILE) {
        let tile_end = (tile_start + TILE).min(n);
        for o in 0..out_dim {
            let w_row = &weights[o * in_dim..(o + 1) * in_dim];
            let b = bias[o];
            for i in tile_start..tile_end {
                let row = &input[i * in_dim..(i + 1) * in_dim];
                let sum = b + dot(w_row, row);
                out[i * out_dim + o] = if relu && sum < 0.0 { 0.0 } else { sum };
            }
        }
    }
    out
}

/// All layer activations, index 0 being the input matrix itself.
/// The last entry holds the logits (no activation on the final layer).
pub(crate) fn forward_trace(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<Vec<Vec<f64>>> {
    if batch.dim() != spec.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "batch has {} features, model expects {}",
            batch.dim(),
            spec.input_dim()
        )));
    }
    if params.len() != spec.n_params() {
        return Err(Error::ShapeMismatch(format!(
            "params have {} values, model expects {}",
            params.len(),
            spec.n_params()
        )));
    }
    let n = batch.n();
    let n_layers = spec.n_layers();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
    acts.push(batch.inputs().to_vec());
    for slice in params.layout() {
        let weights = &params.values()[slice.offset..slice.offset + slice.weight_len()];
        let bias = &params.values()[slice.bias_offset()..slice.bias_offset() + slice.out_dim];
        let is_last = slice.layer + 1 == n_layers;
        let out = dense_layer(
            acts.last().unwrap(),
            n,
            slice.in_dim,
            slice.out_dim,
            weights,
            bias,
            !is_last,
        );
        acts.push(out);
    }
    Ok(acts)
}

/// Forward pass returning logits and penultimate activations.
pub fn forward(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<ForwardPass> {
    let mut acts = forward_trace(spec, params, batch)?;
    let logits = acts.pop().unwrap();
    let penultimate = acts.pop().unwrap();
    Ok(ForwardPass {
        logits,
        penultimate,
        n: batch.n(),
        out_dim: spec.output_dim(),
        penult_dim: spec.penultimate_dim(),
    })
}
