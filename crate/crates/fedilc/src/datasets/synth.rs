//! Synthetic benchmarks: a spurious-feature task that mirrors the colored
//! digits' correlation structure at desk scale, and an imbalanced
//! clinical surrogate with hospital silos.

use rand_chacha::ChaCha8Rng;

use crate::datasets::{FederationDataset, LabeledDataset, Silo};
use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::rng;

/// Draws one spurious-feature sample: `d_inv` invariant features from
/// `Normal(+/-1, 1)` (mean follows the label) plus one binary feature that
/// equals the label flipped with probability `flip`.
fn spurious_sample(rng: &mut ChaCha8Rng, d_inv: usize, flip: f64) -> (Vec<f64>, u32) {
    let y = u32::from(rng::sample_bernoulli(rng, 0.5));
    let mu = if y == 1 { 1.0 } else { -1.0 };
    let mut row = Vec::with_capacity(d_inv + 1);
    for _ in 0..d_inv {
        row.push(mu + rng::sample_normal(rng));
    }
    let spurious = y ^ u32::from(rng::sample_bernoulli(rng, flip));
    row.push(spurious as f64);
    (row, y)
}

fn spurious_set(
    rng: &mut ChaCha8Rng,
    n: usize,
    d_inv: usize,
    flip: f64,
    meta: String,
) -> Result<LabeledDataset> {
    let dim = d_inv + 1;
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (row, y) = spurious_sample(rng, d_inv, flip);
        inputs.extend(row);
        labels.push(y);
    }
    LabeledDataset::new(inputs, dim, labels, meta)
}

/// Synthetic spurious-feature federation. One silo per entry of
/// `flip_probs`, each with `n_per_silo` training and `n_per_silo/4`
/// validation samples; the OOD set holds `max(4096, 2*n_per_silo)`
/// samples flipped with `ood_flip` (large enough that OOD-loss
/// comparisons between runs are not dominated by evaluation noise). The
/// spurious feature is the last column.
pub fn make_synth_spurious(
    n_per_silo: usize,
    d_inv: usize,
    flip_probs: &[f64],
    ood_flip: f64,
    seed: u64,
) -> Result<FederationDataset> {
    if d_inv == 0 {
        return Err(Error::InvalidInput("need at least one invariant feature".into()));
    }
    if n_per_silo < 4 {
        return Err(Error::InvalidInput("need at least 4 samples per silo".into()));
    }
    if flip_probs.is_empty() {
        return Err(Error::InvalidInput("need at least one silo".into()));
    }
    for &p in flip_probs.iter().chain([&ood_flip]) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!(
                "flip probability {p} outside [0, 1]"
            )));
        }
    }

    let val_n = (n_per_silo / 4).max(1);
    let mut silos = Vec::with_capacity(flip_probs.len());
    for (s, &p) in flip_probs.iter().enumerate() {
        let mut rng = rng::stream(seed, rng::TAG_DATASET, 0x5B, s as u64);
        let train = spurious_set(
            &mut rng,
            n_per_silo,
            d_inv,
            p,
            format!("synth_spurious silo {s} flip {p} (train)"),
        )?;
        let val = spurious_set(
            &mut rng,
            val_n,
            d_inv,
            p,
            format!("synth_spurious silo {s} flip {p} (val)"),
        )?;
        silos.push(Silo { train, val });
    }
    let mut rng = rng::stream(seed, rng::TAG_DATASET, 0x5B, u64::MAX);
    let ood_n = (2 * n_per_silo).max(4096);
    let ood_test = spurious_set(
        &mut rng,
        ood_n,
        d_inv,
        ood_flip,
        format!("synth_spurious ood flip {ood_flip}"),
    )?;
    Ok(FederationDataset { silos, ood_test })
}

/// Synthetic clinical surrogate. Hospital sizes are log-normal; patients
/// carry sparse binary features (about 20 active each); labels come from
/// a logistic ground truth with a per-hospital intercept shift, with the
/// global intercept bisected so the expected pooled positive rate equals
/// `positive_rate`. The 20 largest hospitals become training silos (70/30
/// train/val); the rest pool into the OOD set. Returns the federation and
/// the per-hospital patient counts (indexed by hospital id).
pub fn make_synth_clinical(
    n_hospitals: usize,
    n_features: usize,
    positive_rate: f64,
    seed: u64,
) -> Result<(FederationDataset, Vec<usize>)> {
    if n_hospitals < 21 {
        return Err(Error::InvalidInput(format!(
            "need at least 21 hospitals so an OOD pool remains, got {n_hospitals}"
        )));
    }
    if n_features == 0 {
        return Err(Error::InvalidInput("need at least one feature".into()));
    }
    if !(0.0 < positive_rate && positive_rate < 1.0) {
        return Err(Error::InvalidInput(format!(
            "positive rate {positive_rate} outside (0, 1)"
        )));
    }

    let mut rng = rng::stream(seed, rng::TAG_DATASET, 0xC1, 0);

    // median ~400 patients, clamped below so every silo can split 70/30
    let sizes: Vec<usize> = (0..n_hospitals)
        .map(|_| {
            let s = (400.0 * (0.8 * rng::sample_normal(&mut rng)).exp()).round() as usize;
            s.max(30)
        })
        .collect();

    // sparse ground-truth weights over ~20 active features per patient
    let p_active = (20.0 / n_features as f64).min(1.0);
    let w_scale = 1.0 / (n_features as f64 * p_active).sqrt();
    let weights: Vec<f64> = (0..n_features)
        .map(|_| rng::sample_normal(&mut rng) * w_scale)
        .collect();
    let hospital_shift: Vec<f64> = (0..n_hospitals)
        .map(|_| 0.5 * rng::sample_normal(&mut rng))
        .collect();

    // features + raw logits first, so the intercept can be calibrated on
    // the whole population before labels are drawn
    let total: usize = sizes.iter().sum();
    let mut features = vec![0.0f64; total * n_features];
    let mut logits = Vec::with_capacity(total);
    let mut hospital_of = Vec::with_capacity(total);
    let mut row = 0usize;
    for (h, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            let out = &mut features[row * n_features..(row + 1) * n_features];
            let mut z = hospital_shift[h];
            for (j, f) in out.iter_mut().enumerate() {
                if rng::sample_bernoulli(&mut rng, p_active) {
                    *f = 1.0;
                    z += weights[j];
                }
            }
            logits.push(z);
            hospital_of.push(h);
            row += 1;
        }
    }

    // bisect the intercept: mean sigmoid(z + b) is monotone in b
    let rate = |b: f64| logits.iter().map(|&z| sigmoid(z + b)).sum::<f64>() / total as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < positive_rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let intercept = 0.5 * (lo + hi);
    let labels: Vec<u32> = logits
        .iter()
        .map(|&z| u32::from(rng::sample_bernoulli(&mut rng, sigmoid(z + intercept))))
        .collect();

    // training silos: the 20 largest hospitals, descending size (ties by id)
    let mut order: Vec<usize> = (0..n_hospitals).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let (train_hosp, ood_hosp) = order.split_at(20);

    let rows_of = |h: usize| -> Vec<usize> {
        (0..total).filter(|&r| hospital_of[r] == h).collect()
    };
    let build = |rows: &[usize], meta: String| -> Result<LabeledDataset> {
        let mut inputs = Vec::with_capacity(rows.len() * n_features);
        let mut ls = Vec::with_capacity(rows.len());
        for &r in rows {
            inputs.extend_from_slice(&features[r * n_features..(r + 1) * n_features]);
            ls.push(labels[r]);
        }
        LabeledDataset::new(inputs, n_features, ls, meta)
    };

    let mut silos = Vec::with_capacity(20);
    for &h in train_hosp {
        let rows = rows_of(h);
        let ds = build(&rows, format!("synth_clinical hospital {h} ({} patients)", rows.len()))?;
        let train_n = (0.7 * ds.n() as f64).round() as usize;
        let val_n = ds.n() - train_n;
        let (train, val) = ds.split_tail(val_n)?;
        silos.push(Silo { train, val });
    }
    let mut ood_rows = Vec::new();
    for &h in ood_hosp {
        ood_rows.extend(rows_of(h));
    }
    let ood_test = build(
        &ood_rows,
        format!("synth_clinical ood pool ({} hospitals)", ood_hosp.len()),
    )?;

    Ok((FederationDataset { silos, ood_test }, sizes))
}
