//! Minimal feed-forward network engine.
//!
//! A fixed MLP family: ReLU hidden layers and either a sigmoid+BCE or a
//! softmax+CE head, trained with exact batch backprop. Parameters live in
//! one flat `f64` vector with an explicit layout so gradient aggregation
//! can treat models as plain vectors. Everything is 64-bit and fully
//! deterministic under a seed.

mod backward;
mod forward;
mod loss;
mod optim;

pub use backward::{backward_full, head_grads_from_activations, per_sample_head_grads};
pub(crate) use forward::forward_trace;
pub use forward::{forward, ForwardPass};
pub(crate) use loss::sample_loss;
pub use loss::{compute_loss, log_sum_exp, sigmoid, softmax_row, softplus};
pub use optim::{adam_step, sgd_step, AdamState, Optimizer};

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;

/// Hidden-layer activation. Only ReLU is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

/// Output head: a sigmoid with binary cross-entropy (single logit) or a
/// softmax with cross-entropy (one logit per class).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    SigmoidBce,
    SoftmaxCe,
}

/// Architecture description: layer sizes from input to output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    layer_sizes: Vec<usize>,
    activation: Activation,
    head: Head,
}

/// Location of one dense layer inside the flat parameter vector.
///
/// Weights are row-major `(out_dim, in_dim)` starting at `offset`; the
/// bias vector of length `out_dim` follows immediately after.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlice {
    pub layer: usize,
    pub out_dim: usize,
    pub in_dim: usize,
    pub offset: usize,
}

impl LayerSlice {
    pub fn weight_len(&self) -> usize {
        self.out_dim * self.in_dim
    }

    pub fn bias_offset(&self) -> usize {
        self.offset + self.weight_len()
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.out_dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, head: Head) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 layers, got {}",
                layer_sizes.len()
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidSpec("all layer sizes must be >= 1".into()));
        }
        let out = *layer_sizes.last().unwrap();
        match head {
            Head::SigmoidBce if out != 1 => {
                return Err(Error::InvalidSpec(format!(
                    "sigmoid head requires output size 1, got {out}"
                )));
            }
            Head::SoftmaxCe if out < 2 => {
                return Err(Error::InvalidSpec(format!(
                    "softmax head requires output size >= 2, got {out}"
                )));
            }
            _ => {}
        }
        Ok(Self {
            layer_sizes,
            activation,
            head,
        })
    }

    /// Convenience for binary-classification MLPs: `[input, hidden.., 1]`.
    pub fn sigmoid_mlp(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::new(sizes, Activation::Relu, Head::SigmoidBce)
    }

    /// Convenience for k-class MLPs: `[input, hidden.., classes]`.
    pub fn softmax_mlp(input_dim: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        Self::new(sizes, Activation::Relu, Head::SoftmaxCe)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Width of the penultimate activation (input to the final layer).
    pub fn penultimate_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 2]
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Layout is a pure function of the spec: layers in order, offsets
    /// contiguous and non-overlapping.
    pub fn layout(&self) -> Vec<LayerSlice> {
        let mut slices = Vec::with_capacity(self.n_layers());
        let mut offset = 0;
        for l in 0..self.n_layers() {
            let slice = LayerSlice {
                layer: l,
                out_dim: self.layer_sizes[l + 1],
                in_dim: self.layer_sizes[l],
                offset,
            };
            offset += slice.len();
            slices.push(slice);
        }
        slices
    }

    pub fn n_params(&self) -> usize {
        self.layout().iter().map(|s| s.len()).sum()
    }

    /// Number of parameters in the final linear layer (weights + bias).
    pub fn head_param_count(&self) -> usize {
        self.output_dim() * (self.penultimate_dim() + 1)
    }

    /// Offset of the final layer's block inside the flat vector.
    pub fn head_offset(&self) -> usize {
        self.n_params() - self.head_param_count()
    }
}

/// Flat parameter vector plus the layout it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayerSlice>,
}

impl ParamVector {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            values: vec![0.0; spec.n_params()],
            layout: spec.layout(),
        }
    }

    /// Wraps an existing flat vector, checking the length against the spec.
    pub fn from_values(spec: &ModelSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "param vector has {} values, spec needs {}",
                values.len(),
                spec.n_params()
            )));
        }
        Ok(Self {
            values,
            layout: spec.layout(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[LayerSlice] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The final linear layer's parameters (weights then bias).
    pub fn head_block(&self) -> &[f64] {
        let last = self.layout.last().expect("layout is non-empty");
        &self.values[last.offset..last.offset + last.len()]
    }
}

/// A batch of samples: row-major inputs and one label per row.
///
/// Labels are class indices for a softmax head and {0, 1} for a sigmoid
/// head; `Batch::new` checks neither against a spec (the forward pass
/// does), only basic shape consistency.
#[derive(Debug, Clone)]
pub struct Batch {
    inputs: Vec<f64>,
    n: usize,
    dim: usize,
    labels: Vec<u32>,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Vec<u32>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidInput("batch needs at least one sample".into()));
        }
        if dim == 0 || inputs.len() != n * dim {
            return Err(Error::ShapeMismatch(format!(
                "inputs len {} does not match {n} samples x {dim} features",
                inputs.len()
            )));
        }
        Ok(Self {
            inputs,
            n,
            dim,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }
}

/// Deterministic Glorot-uniform init: weights from
/// `U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))`, biases zero.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = rng::stream(seed, rng::TAG_INIT, 0, 0);
    let mut params = ParamVector::zeros(spec);
    for slice in spec.layout() {
        let limit = (6.0 / (slice.in_dim + slice.out_dim) as f64).sqrt();
        let w = &mut params.values[slice.offset..slice.offset + slice.weight_len()];
        for v in w.iter_mut() {
            *v = rng.gen_range(-limit..limit);
        }
        // biases stay zero
    }
    params
}
