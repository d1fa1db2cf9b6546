//! Rotated-image silos: each client sees the base images under its own
//! set of rotation angles (sub-environments); the OOD set draws angles
//! uniformly from a range.

use rand::Rng;

use crate::datasets::{
    partition_indices, val_count, FederationDataset, ImageSet, LabeledDataset, Silo,
};
use crate::error::{Error, Result};
use crate::rng;

/// Rotates an `h x w x c` channel-last image about its center by
/// `degrees`, counterclockwise for positive angles (with row 0 displayed
/// on top). Bilinear interpolation; samples falling outside the source
/// are 0.
pub fn rotate_image(pixels: &[f64], h: usize, w: usize, c: usize, degrees: f64) -> Vec<f64> {
    let a = degrees.to_radians();
    let (sin, cos) = a.sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; pixels.len()];
    for r in 0..h {
        let y = r as f64 - cy;
        for col in 0..w {
            let x = col as f64 - cx;
            // inverse map: where this destination pixel comes from
            let sx = cx + x * cos - y * sin;
            let sy = cy + x * sin + y * cos;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let sample = |yy: isize, xx: isize| -> Option<usize> {
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    None
                } else {
                    Some((yy as usize * w + xx as usize) * c)
                }
            };
            let corners = [
                (sample(y0, x0), (1.0 - fy) * (1.0 - fx)),
                (sample(y0, x0 + 1), (1.0 - fy) * fx),
                (sample(y0 + 1, x0), fy * (1.0 - fx)),
                (sample(y0 + 1, x0 + 1), fy * fx),
            ];
            let dst = (r * w + col) * c;
            for ch in 0..c {
                let mut v = 0.0;
                for &(src, weight) in &corners {
                    if let Some(base) = src {
                        v += weight * pixels[base + ch];
                    }
                }
                out[dst + ch] = v;
            }
        }
    }
    out
}

/// Channel mean followed by a bilinear resize to `th x tw`.
pub(crate) fn downscale_gray(
    pixels: &[f64],
    h: usize,
    w: usize,
    c: usize,
    th: usize,
    tw: usize,
) -> Vec<f64> {
    let mut gray = vec![0.0; h * w];
    for (p, g) in gray.iter_mut().enumerate() {
        let base = p * c;
        *g = pixels[base..base + c].iter().sum::<f64>() / c as f64;
    }
    if th == h && tw == w {
        return gray;
    }
    let sy = h as f64 / th as f64;
    let sx = w as f64 / tw as f64;
    let mut out = vec![0.0; th * tw];
    for r in 0..th {
        let src_y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, h as f64 - 1.0);
        let y0 = src_y.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = src_y - y0 as f64;
        for col in 0..tw {
            let src_x = ((col as f64 + 0.5) * sx - 0.5).clamp(0.0, w as f64 - 1.0);
            let x0 = src_x.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = src_x - x0 as f64;
            out[r * tw + col] = (1.0 - fy) * (1.0 - fx) * gray[y0 * w + x0]
                + (1.0 - fy) * fx * gray[y0 * w + x1]
                + fy * (1.0 - fx) * gray[y1 * w + x0]
                + fy * fx * gray[y1 * w + x1];
        }
    }
    out
}

const TARGET_SIDE: usize = 16;

/// Builds rotated silos. Each silo's share of the base set is dealt
/// round-robin across its angle list (sub-environments, tagged per
/// sample and balanced within one count of each other); the OOD part
/// draws a fresh angle per image from `uniform(ood_range)`. Images are
/// rotated at full resolution, then reduced to 16x16 grayscale and
/// flattened. Class labels pass through unchanged.
pub fn make_rotated_silos(
    base: &ImageSet,
    silo_degrees: &[Vec<f64>],
    ood_range: (f64, f64),
    seed: u64,
) -> Result<FederationDataset> {
    if silo_degrees.is_empty() || silo_degrees.iter().any(|d| d.is_empty()) {
        return Err(Error::InvalidInput(
            "every silo needs at least one rotation angle".into(),
        ));
    }
    if ood_range.0 > ood_range.1 {
        return Err(Error::InvalidInput(format!(
            "empty OOD angle range {:?}",
            ood_range
        )));
    }
    let parts_needed = silo_degrees.len() + 1;
    if base.n() < parts_needed * 5 {
        return Err(Error::InvalidInput(format!(
            "{} base images are too few for {parts_needed} parts",
            base.n()
        )));
    }

    let mut rng = rng::stream(seed, rng::TAG_DATASET, 0x07, 0);
    let parts = partition_indices(&mut rng, base.n(), parts_needed);
    let dim = TARGET_SIDE * TARGET_SIDE;

    let encode_one = |i: usize, degrees: f64| -> Vec<f64> {
        let rotated = rotate_image(base.image(i), base.h, base.w, base.c, degrees);
        downscale_gray(&rotated, base.h, base.w, base.c, TARGET_SIDE, TARGET_SIDE)
    };

    let mut silos = Vec::with_capacity(silo_degrees.len());
    for (s, angles) in silo_degrees.iter().enumerate() {
        let idx = &parts[s];
        let mut inputs = Vec::with_capacity(idx.len() * dim);
        let mut labels = Vec::with_capacity(idx.len());
        let mut envs = Vec::with_capacity(idx.len());
        for (j, &i) in idx.iter().enumerate() {
            let env = j % angles.len();
            inputs.extend(encode_one(i, angles[env]));
            labels.push(base.labels[i]);
            envs.push(env as u32);
        }
        let mut ds = LabeledDataset::new(
            inputs,
            dim,
            labels,
            format!("rotated silo {s} angles {angles:?}"),
        )?;
        ds.sub_env = Some(envs);
        let val_n = val_count(ds.n());
        let (train, val) = ds.split_tail(val_n)?;
        silos.push(Silo { train, val });
    }

    let ood_idx = &parts[silo_degrees.len()];
    let mut inputs = Vec::with_capacity(ood_idx.len() * dim);
    let mut labels = Vec::with_capacity(ood_idx.len());
    for &i in ood_idx {
        let angle = rng.gen_range(ood_range.0..=ood_range.1);
        inputs.extend(encode_one(i, angle));
        labels.push(base.labels[i]);
    }
    let ood_test = LabeledDataset::new(
        inputs,
        dim,
        labels,
        format!("rotated ood angles {:?}", ood_range),
    )?;

    Ok(FederationDataset { silos, ood_test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_blob(h: usize, w: usize) -> Vec<f64> {
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let sigma = h as f64 / 6.0;
        let mut img = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                img[r * w + c] = (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
        img
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img: Vec<f64> = (0..36).map(|v| v as f64 / 35.0).collect();
        assert_eq!(rotate_image(&img, 6, 6, 1, 0.0), img);
    }

    #[test]
    fn double_half_turn_recovers_image() {
        let img = gaussian_blob(9, 9);
        let once = rotate_image(&img, 9, 9, 1, 180.0);
        let twice = rotate_image(&once, 9, 9, 1, 180.0);
        for (a, b) in img.iter().zip(twice.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn quarter_turn_moves_one_hot_pixel() {
        // 2x2, lit top-right; +90 (counterclockwise) puts it top-left
        let img = vec![0.0, 1.0, 0.0, 0.0];
        let out = rotate_image(&img, 2, 2, 1, 90.0);
        assert!((out[0] - 1.0).abs() < 1e-12, "{out:?}");
        assert!(out[1].abs() < 1e-12 && out[2].abs() < 1e-12 && out[3].abs() < 1e-12);
    }

    #[test]
    fn rotation_preserves_intensity_of_smooth_images() {
        let img = gaussian_blob(16, 16);
        let total: f64 = img.iter().sum();
        for &deg in &[-90.0, -45.0, -10.0, 15.0, 60.0, 90.0] {
            let rotated = rotate_image(&img, 16, 16, 1, deg);
            let rot_total: f64 = rotated.iter().sum();
            assert!(
                (rot_total - total).abs() / total < 0.02,
                "{deg} deg: {rot_total} vs {total}"
            );
        }
    }

    fn random_rgb(n: usize, side: usize, seed: u64) -> ImageSet {
        use rand::Rng;
        let mut rng = rng::stream(seed, rng::TAG_DATASET, 3, 3);
        let pixels: Vec<f64> = (0..n * side * side * 3).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..10)).collect();
        ImageSet::new(side, side, 3, pixels, labels).unwrap()
    }

    #[test]
    fn single_silo_zero_angle_matches_downscaled_base() {
        let base = random_rgb(40, 32, 1);
        let fed = make_rotated_silos(&base, &[vec![0.0]], (-90.0, 90.0), 5).unwrap();
        let silo = &fed.silos[0];
        // every silo row must equal the plain downscale of SOME base image
        let downscaled: Vec<Vec<f64>> = (0..base.n())
            .map(|i| downscale_gray(base.image(i), 32, 32, 3, 16, 16))
            .collect();
        for i in 0..silo.train.n() {
            let row = silo.train.row(i);
            assert!(
                downscaled.iter().any(|d| d.as_slice() == row),
                "row {i} does not match any downscaled base image"
            );
        }
    }

    #[test]
    fn table_layout_three_silos_three_envs() {
        let base = random_rgb(200, 32, 2);
        let degrees = vec![
            vec![10.0, 25.0, 40.0],
            vec![60.0, 75.0, 90.0],
            vec![-10.0, -40.0, -90.0],
        ];
        let fed = make_rotated_silos(&base, &degrees, (-90.0, 90.0), 6).unwrap();
        assert_eq!(fed.n_clients(), 3);
        for silo in &fed.silos {
            let mut counts = [0usize; 3];
            for ds in [&silo.train, &silo.val] {
                for &e in ds.sub_env.as_ref().unwrap() {
                    counts[e as usize] += 1;
                }
            }
            let max = counts.iter().max().unwrap();
            let min = counts.iter().min().unwrap();
            assert!(max - min <= 1, "sub-env counts unbalanced: {counts:?}");
        }
        assert_eq!(fed.feature_dim(), 256);
    }

    #[test]
    fn same_seed_same_ood_angles() {
        let base = random_rgb(60, 32, 3);
        let a = make_rotated_silos(&base, &[vec![0.0, 30.0]], (-90.0, 90.0), 8).unwrap();
        let b = make_rotated_silos(&base, &[vec![0.0, 30.0]], (-90.0, 90.0), 8).unwrap();
        assert_eq!(a.ood_test.inputs, b.ood_test.inputs);
    }
}
