//! Colored-digit silos: the digit's color is spuriously correlated with
//! its binary label, with a per-silo flip probability that the OOD set
//! breaks.

use crate::datasets::{
    partition_indices, val_count, FederationDataset, ImageSet, LabeledDataset, Silo,
};
use crate::error::{Error, Result};
use crate::rng;

/// Builds colored-digit silos from grayscale digit images.
///
/// The binary label is `digit >= 5`. Each sample's color bit starts as the
/// label and flips with the silo's probability; the image becomes two
/// channels, the red plane holding the digit when the color bit is 1 and
/// the green plane when it is 0, flattened red-then-green. The OOD set
/// additionally flips the label itself with `ood_label_flip` before
/// coloring with `ood_color_flip`.
///
/// The base set is shuffled and dealt into `flip_probs.len() + 1` equal
/// parts: one per silo plus the OOD part. Each silo is split 80/20 into
/// train/val.
pub fn make_color_digits(
    base: &ImageSet,
    flip_probs: &[f64],
    ood_color_flip: f64,
    ood_label_flip: f64,
    seed: u64,
) -> Result<FederationDataset> {
    if base.c != 1 {
        return Err(Error::InvalidInput(format!(
            "colored digits need a grayscale base, got {} channels",
            base.c
        )));
    }
    if flip_probs.is_empty() {
        return Err(Error::InvalidInput("need at least one silo".into()));
    }
    for &p in flip_probs.iter().chain([&ood_color_flip, &ood_label_flip]) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!(
                "flip probability {p} outside [0, 1]"
            )));
        }
    }
    if base.labels.iter().any(|&d| d > 9) {
        return Err(Error::InvalidInput("digit labels must be 0-9".into()));
    }
    let parts_needed = flip_probs.len() + 1;
    if base.n() < parts_needed * 5 {
        return Err(Error::InvalidInput(format!(
            "{} base images are too few for {parts_needed} parts",
            base.n()
        )));
    }

    let mut rng = rng::stream(seed, rng::TAG_DATASET, 0xC0, 0);
    let parts = partition_indices(&mut rng, base.n(), parts_needed);
    let plane = base.h * base.w;
    let dim = 2 * plane;

    let encode = |idx: &[usize], label_flip: f64, color_flip: f64, rng: &mut rand_chacha::ChaCha8Rng, meta: String| -> Result<LabeledDataset> {
        let mut inputs = vec![0.0; idx.len() * dim];
        let mut labels = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            let mut y = u32::from(base.labels[i] >= 5);
            if label_flip > 0.0 && rng::sample_bernoulli(rng, label_flip) {
                y ^= 1;
            }
            let mut color = y;
            if rng::sample_bernoulli(rng, color_flip) {
                color ^= 1;
            }
            let img = base.image(i);
            let out = &mut inputs[row * dim..(row + 1) * dim];
            if color == 1 {
                out[..plane].copy_from_slice(img);
            } else {
                out[plane..].copy_from_slice(img);
            }
            labels.push(y);
        }
        LabeledDataset::new(inputs, dim, labels, meta)
    };

    let mut silos = Vec::with_capacity(flip_probs.len());
    for (s, &p) in flip_probs.iter().enumerate() {
        let ds = encode(
            &parts[s],
            0.0,
            p,
            &mut rng,
            format!("color_digits silo {s} color_flip {p}"),
        )?;
        let val_n = val_count(ds.n());
        let (train, val) = ds.split_tail(val_n)?;
        silos.push(Silo { train, val });
    }
    let ood_test = encode(
        &parts[flip_probs.len()],
        ood_label_flip,
        ood_color_flip,
        &mut rng,
        format!("color_digits ood color_flip {ood_color_flip} label_flip {ood_label_flip}"),
    )?;

    Ok(FederationDataset { silos, ood_test })
}
