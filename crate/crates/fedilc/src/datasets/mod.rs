//! Non-i.i.d. silo construction and raw-format loaders.
//!
//! Generators build a [`FederationDataset`]: one train/val pair per client
//! plus a shared out-of-distribution test set whose correlation structure
//! deliberately breaks the silos'. Every generator is a pure function of
//! its seed.

mod cifar;
mod clinical_csv;
mod color;
mod idx;
mod rotated;
mod synth;

pub use cifar::{load_cifar_batch, load_cifar_batches};
pub use clinical_csv::load_clinical_csv;
pub use color::make_color_digits;
pub use idx::{load_idx, load_mnist, parse_idx, IdxData};
pub use rotated::{make_rotated_silos, rotate_image};
pub use synth::{make_synth_clinical, make_synth_spurious};

use crate::error::{Error, Result};
use crate::nn::Batch;

/// Feature rows plus labels. `sub_env` optionally tags each sample with
/// the sub-environment it was generated under.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub inputs: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<u32>,
    pub meta: String,
    pub sub_env: Option<Vec<u32>>,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Vec<u32>, meta: String) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("feature dimension must be >= 1".into()));
        }
        if inputs.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not form {} rows of {dim} features",
                inputs.len(),
                labels.len()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(Self {
            inputs,
            dim,
            labels,
            meta,
            sub_env: None,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    /// The whole dataset as one batch.
    pub fn to_batch(&self) -> Result<Batch> {
        Batch::new(self.inputs.clone(), self.dim, self.labels.clone())
    }

    /// A batch holding the given rows, in the given order.
    pub fn batch_of(&self, indices: &[usize]) -> Result<Batch> {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch::new(inputs, self.dim, labels)
    }

    /// Splits off the last `val_n` rows as a validation set.
    pub(crate) fn split_tail(mut self, val_n: usize) -> Result<(Self, Self)> {
        let n = self.n();
        if val_n == 0 || val_n >= n {
            return Err(Error::InvalidInput(format!(
                "cannot split {val_n} validation rows out of {n}"
            )));
        }
        let train_n = n - val_n;
        let val_inputs = self.inputs.split_off(train_n * self.dim);
        let val_labels = self.labels.split_off(train_n);
        let val_envs = self.sub_env.as_mut().map(|e| e.split_off(train_n));
        let val = Self {
            inputs: val_inputs,
            dim: self.dim,
            labels: val_labels,
            meta: format!("{} (val)", self.meta),
            sub_env: val_envs,
        };
        Ok((self, val))
    }
}

/// One federated client's private data.
#[derive(Debug, Clone)]
pub struct Silo {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
}

/// All clients plus the shared OOD test set.
#[derive(Debug, Clone)]
pub struct FederationDataset {
    pub silos: Vec<Silo>,
    pub ood_test: LabeledDataset,
}

impl FederationDataset {
    pub fn n_clients(&self) -> usize {
        self.silos.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.ood_test.dim
    }

    /// Checks the shapes a training run relies on: at least one silo,
    /// non-empty train/OOD sets, one shared feature dimension.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.silos.is_empty() {
            return Err(Error::InvalidInput("federation has no silos".into()));
        }
        if self.ood_test.n() == 0 {
            return Err(Error::InvalidInput("OOD test set is empty".into()));
        }
        let dim = self.ood_test.dim;
        for (i, silo) in self.silos.iter().enumerate() {
            if silo.train.n() == 0 {
                return Err(Error::InvalidInput(format!(
                    "silo {i} has no training data"
                )));
            }
            if silo.train.dim != dim || silo.val.dim != dim {
                return Err(Error::ShapeMismatch(format!(
                    "silo {i} feature dim differs from the OOD set's {dim}"
                )));
            }
        }
        Ok(())
    }
}

/// Raw images, channel-last row-major, pixel values in [0, 1].
#[derive(Debug, Clone)]
pub struct ImageSet {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub pixels: Vec<f64>,
    pub labels: Vec<u32>,
}

impl ImageSet {
    pub fn new(h: usize, w: usize, c: usize, pixels: Vec<f64>, labels: Vec<u32>) -> Result<Self> {
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::InvalidInput("image dimensions must be >= 1".into()));
        }
        if pixels.len() != labels.len() * h * w * c {
            return Err(Error::ShapeMismatch(format!(
                "{} pixel values do not form {} images of {h}x{w}x{c}",
                pixels.len(),
                labels.len()
            )));
        }
        Ok(Self {
            h,
            w,
            c,
            pixels,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn image_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.pixels[i * self.image_len()..(i + 1) * self.image_len()]
    }
}

/// Shuffles `0..n` and deals it into `parts` disjoint groups of equal
/// size; the remainder goes to the last group. Silos never share base
/// indices with the OOD pool because they come from different groups.
pub(crate) fn partition_indices<R: rand::Rng>(
    rng: &mut R,
    n: usize,
    parts: usize,
) -> Vec<Vec<usize>> {
    let order = crate::rng::shuffled_indices(rng, n);
    let size = n / parts;
    let mut out = Vec::with_capacity(parts);
    for p in 0..parts {
        let end = if p + 1 == parts { n } else { (p + 1) * size };
        out.push(order[p * size..end].to_vec());
    }
    out
}

/// Validation fraction used by the image-based generators.
pub(crate) const VAL_FRAC: f64 = 0.2;

pub(crate) fn val_count(n: usize) -> usize {
    ((n as f64 * VAL_FRAC).round() as usize).clamp(1, n.saturating_sub(1))
}
