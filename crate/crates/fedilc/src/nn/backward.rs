//! Exact gradients: full-batch backprop and per-sample final-layer grads.

use crate::error::{Error, Result};
use crate::nn::loss::{sigmoid, softmax_row};
use crate::nn::{forward, forward_trace, Batch, Head, ModelSpec, ParamVector};

/// Per-sample head residuals `dL_i/dz` *without* the 1/n batch factor:
/// `sigma(z_i) - y_i` for the sigmoid head, `softmax(z_i) - onehot(y_i)`
/// for softmax. Row-major `n x k`.
fn residuals(logits: &[f64], labels: &[u32], k: usize, head: Head) -> Result<Vec<f64>> {
    let n = labels.len();
    let mut res = vec![0.0; n * k];
    match head {
        Head::SigmoidBce => {
            for i in 0..n {
                if labels[i] > 1 {
                    return Err(Error::InvalidInput(format!(
                        "binary label out of range: {}",
                        labels[i]
                    )));
                }
                res[i] = sigmoid(logits[i]) - labels[i] as f64;
            }
        }
        Head::SoftmaxCe => {
            for i in 0..n {
                let y = labels[i] as usize;
                if y >= k {
                    return Err(Error::InvalidInput(format!(
                        "class label {y} out of range for {k} classes"
                    )));
                }
                let probs = softmax_row(&logits[i * k..(i + 1) * k]);
                for j in 0..k {
                    res[i * k + j] = probs[j] - if j == y { 1.0 } else { 0.0 };
                }
            }
        }
    }
    Ok(res)
}

/// Exact gradient of the mean loss with respect to every parameter.
pub fn backward_full(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<Vec<f64>> {
    let acts = forward_trace(spec, params, batch)?;
    let n = batch.n();
    let k = spec.output_dim();
    let logits = acts.last().unwrap();

    // delta carries dL/dz for the current layer, averaged over the batch.
    let mut delta = residuals(logits, batch.labels(), k, spec.head())?;
    let inv_n = 1.0 / n as f64;
    for d in delta.iter_mut() {
        *d *= inv_n;
    }

    let mut grad = vec![0.0; spec.n_params()];
    let layout = params.layout().to_vec();
    for slice in layout.iter().rev() {
        let a_in = &acts[slice.layer];
        let (in_dim, out_dim) = (slice.in_dim, slice.out_dim);

        let (gw, gb) = grad[slice.offset..slice.offset + slice.len()].split_at_mut(slice.weight_len());
        for i in 0..n {
            let d_row = &delta[i * out_dim..(i + 1) * out_dim];
            let a_row = &a_in[i * in_dim..(i + 1) * in_dim];
            for (o, &d) in d_row.iter().enumerate() {
                gb[o] += d;
                let gw_row = &mut gw[o * in_dim..(o + 1) * in_dim];
                for (g, &a) in gw_row.iter_mut().zip(a_row.iter()) {
                    *g += d * a;
                }
            }
        }

        if slice.layer > 0 {
            // propagate through the affine map, then the ReLU of the layer
            // below (its output is a_in; relu' = 1 where the output > 0).
            let weights = &params.values()[slice.offset..slice.offset + slice.weight_len()];
            let mut prev = vec![0.0; n * in_dim];
            for i in 0..n {
                let d_row = &delta[i * out_dim..(i + 1) * out_dim];
                let p_row = &mut prev[i * in_dim..(i + 1) * in_dim];
                for (o, &d) in d_row.iter().enumerate() {
                    let w_row = &weights[o * in_dim..(o + 1) * in_dim];
                    for (p, &w) in p_row.iter_mut().zip(w_row.iter()) {
                        *p += d * w;
                    }
                }
                let a_row = &a_in[i * in_dim..(i + 1) * in_dim];
                for (p, &a) in p_row.iter_mut().zip(a_row.iter()) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
    }
    Ok(grad)
}

/// Per-sample gradients over the final linear layer only, given that
/// layer's parameters and fixed penultimate activations.
///
/// Layout per sample matches the head block of the flat vector: weights
/// row-major `(k, h_dim)` then the k biases. The mean over samples equals
/// the head block of [`backward_full`].
pub fn head_grads_from_activations(
    head_params: &[f64],
    penultimate: &[f64],
    h_dim: usize,
    k: usize,
    labels: &[u32],
    head: Head,
) -> Result<Vec<Vec<f64>>> {
    let n = labels.len();
    if head_params.len() != k * (h_dim + 1) {
        return Err(Error::ShapeMismatch(format!(
            "head has {} params, expected {}",
            head_params.len(),
            k * (h_dim + 1)
        )));
    }
    if penultimate.len() != n * h_dim {
        return Err(Error::ShapeMismatch(format!(
            "penultimate activations have {} values, expected {} x {h_dim}",
            penultimate.len(),
            n
        )));
    }
    let (w, b) = head_params.split_at(k * h_dim);
    let mut logits = vec![0.0; n * k];
    for i in 0..n {
        let h = &penultimate[i * h_dim..(i + 1) * h_dim];
        for j in 0..k {
            let w_row = &w[j * h_dim..(j + 1) * h_dim];
            logits[i * k + j] = b[j] + w_row.iter().zip(h.iter()).map(|(w, x)| w * x).sum::<f64>();
        }
    }
    let res = residuals(&logits, labels, k, head)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let h = &penultimate[i * h_dim..(i + 1) * h_dim];
        let mut g = vec![0.0; k * (h_dim + 1)];
        for j in 0..k {
            let r = res[i * k + j];
            for (c, &hv) in h.iter().enumerate() {
                g[j * h_dim + c] = r * hv;
            }
            g[k * h_dim + j] = r;
        }
        out.push(g);
    }
    Ok(out)
}

/// Per-sample gradients of the final linear layer for a batch, running the
/// forward pass to obtain penultimate activations.
pub fn per_sample_head_grads(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<Vec<Vec<f64>>> {
    let fp = forward(spec, params, batch)?;
    head_grads_from_activations(
        params.head_block(),
        &fp.penultimate,
        fp.penult_dim,
        fp.out_dim,
        batch.labels(),
        spec.head(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{compute_loss, init_params, Activation};
    use rand::Rng;

    /// Central finite differences of the mean loss; the independent oracle
    /// for backprop correctness.
    fn fd_gradient(spec: &ModelSpec, params: &ParamVector, batch: &Batch, h: f64) -> Vec<f64> {
        let mut fd = vec![0.0; params.len()];
        let mut p = params.clone();
        for i in 0..p.len() {
            let orig = p.values()[i];
            p.values_mut()[i] = orig + h;
            let up = compute_loss(&forward(spec, &p, batch).unwrap().logits, batch.labels(), spec.head()).unwrap();
            p.values_mut()[i] = orig - h;
            let down = compute_loss(&forward(spec, &p, batch).unwrap().logits, batch.labels(), spec.head()).unwrap();
            p.values_mut()[i] = orig;
            fd[i] = (up - down) / (2.0 * h);
        }
        fd
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    fn random_batch(n: usize, dim: usize, classes: u32, seed: u64) -> Batch {
        let mut rng = crate::rng::stream(seed, crate::rng::TAG_DATASET, 9, 9);
        let inputs: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        Batch::new(inputs, dim, labels).unwrap()
    }

    #[test]
    fn constant_output_model_head_bias_gradient() {
        // zero final layer on top of anything: logit = 0, sigma(0) = 0.5,
        // so the head-bias gradient is mean(0.5 - y).
        let spec = ModelSpec::sigmoid_mlp(2, &[3]).unwrap();
        let mut params = init_params(&spec, 3);
        let head_off = spec.head_offset();
        for v in &mut params.values_mut()[head_off..] {
            *v = 0.0;
        }
        let batch = random_batch(8, 2, 2, 4);
        let grad = backward_full(&spec, &params, &batch).unwrap();
        let bias_grad = grad[spec.n_params() - 1];
        let expected: f64 = batch.labels().iter().map(|&y| 0.5 - y as f64).sum::<f64>()
            / batch.n() as f64;
        assert!((bias_grad - expected).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences_sigmoid() {
        let spec = ModelSpec::sigmoid_mlp(4, &[8]).unwrap();
        let params = init_params(&spec, 11);
        let batch = random_batch(16, 4, 2, 12);
        let grad = backward_full(&spec, &params, &batch).unwrap();
        let fd = fd_gradient(&spec, &params, &batch, 1e-5);
        let err = max_rel_err(&grad, &fd);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn backward_matches_finite_differences_softmax() {
        let spec = ModelSpec::softmax_mlp(3, &[6], 4).unwrap();
        let params = init_params(&spec, 21);
        let batch = random_batch(10, 3, 4, 22);
        let grad = backward_full(&spec, &params, &batch).unwrap();
        let fd = fd_gradient(&spec, &params, &batch, 1e-5);
        let err = max_rel_err(&grad, &fd);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn backward_matches_finite_differences_deeper_net() {
        // three hidden layers, still under 500 params
        let spec = ModelSpec::sigmoid_mlp(5, &[9, 9, 7]).unwrap();
        assert!(spec.n_params() <= 500);
        // seed picked so no ReLU pre-activation sits within the FD step of
        // its kink; central differences are meaningless across the kink
        let params = init_params(&spec, 33);
        let batch = random_batch(12, 5, 2, 34);
        let grad = backward_full(&spec, &params, &batch).unwrap();
        let fd = fd_gradient(&spec, &params, &batch, 1e-5);
        let err = max_rel_err(&grad, &fd);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn duplicated_batch_gives_same_gradient() {
        let spec = ModelSpec::sigmoid_mlp(3, &[5]).unwrap();
        let params = init_params(&spec, 5);
        let batch = random_batch(6, 3, 2, 6);
        let mut inputs = batch.inputs().to_vec();
        inputs.extend_from_slice(batch.inputs());
        let mut labels = batch.labels().to_vec();
        labels.extend_from_slice(batch.labels());
        let doubled = Batch::new(inputs, 3, labels).unwrap();

        let g1 = backward_full(&spec, &params, &batch).unwrap();
        let g2 = backward_full(&spec, &params, &doubled).unwrap();
        let err = max_rel_err(&g1, &g2);
        assert!(err < 1e-13, "duplication changed the mean gradient: {err}");
    }

    #[test]
    fn per_sample_zero_residual_gives_zero_gradient() {
        // sigma(50) - 1 is ~2e-22; the per-sample gradient must vanish with it.
        let g = head_grads_from_activations(&[50.0, 0.0], &[1.0], 1, 1, &[1], Head::SigmoidBce)
            .unwrap();
        assert!(g[0].iter().all(|&v| v.abs() < 1e-20));
    }

    #[test]
    fn per_sample_hand_case() {
        // h = [1, 0], w = 0, b = 0, y = 1: residual = -0.5,
        // g = [-0.5, 0 | -0.5] (weights then bias)
        let g = head_grads_from_activations(
            &[0.0, 0.0, 0.0],
            &[1.0, 0.0],
            2,
            1,
            &[1],
            Head::SigmoidBce,
        )
        .unwrap();
        assert_eq!(g[0], vec![-0.5, 0.0, -0.5]);
    }

    #[test]
    fn per_sample_mean_matches_backward_head_block() {
        let spec = ModelSpec::sigmoid_mlp(4, &[6]).unwrap();
        let params = init_params(&spec, 41);
        let batch = random_batch(9, 4, 2, 42);
        let per = per_sample_head_grads(&spec, &params, &batch).unwrap();
        let full = backward_full(&spec, &params, &batch).unwrap();
        let head = &full[spec.head_offset()..];
        let n = per.len() as f64;
        for c in 0..head.len() {
            let mean: f64 = per.iter().map(|g| g[c]).sum::<f64>() / n;
            assert!((mean - head[c]).abs() < 1e-12, "coord {c}");
        }
    }

    #[test]
    fn per_sample_mean_matches_backward_head_block_softmax() {
        let spec = ModelSpec::softmax_mlp(3, &[5], 3).unwrap();
        let params = init_params(&spec, 51);
        let batch = random_batch(7, 3, 3, 52);
        let per = per_sample_head_grads(&spec, &params, &batch).unwrap();
        let full = backward_full(&spec, &params, &batch).unwrap();
        let head = &full[spec.head_offset()..];
        let n = per.len() as f64;
        for c in 0..head.len() {
            let mean: f64 = per.iter().map(|g| g[c]).sum::<f64>() / n;
            assert!((mean - head[c]).abs() < 1e-12, "coord {c}");
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let spec = ModelSpec::new(vec![4, 8, 1], Activation::Relu, Head::SigmoidBce).unwrap();
        let params = init_params(&spec, 61);
        let batch = random_batch(5, 4, 2, 62);
        let g1 = backward_full(&spec, &params, &batch).unwrap();
        let g2 = backward_full(&spec, &params, &batch).unwrap();
        assert_eq!(g1, g2);
    }
}

