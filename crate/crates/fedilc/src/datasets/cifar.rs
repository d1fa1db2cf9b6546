//! CIFAR-10 binary batches: 3073-byte records, one label byte followed by
//! three 1024-byte color planes (R, G, B) of a 32x32 image.

use std::path::{Path, PathBuf};

use crate::datasets::ImageSet;
use crate::error::{Error, Result};

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
const RECORD: usize = 1 + 3 * PLANE;

/// Loads one binary batch file into a channel-last RGB [`ImageSet`].
pub fn load_cifar_batch(path: &Path) -> Result<ImageSet> {
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::CifarFormat(format!(
            "{}: {} bytes is not a multiple of the {RECORD}-byte record",
            path.display(),
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD;
    let mut pixels = vec![0.0; n * PLANE * 3];
    let mut labels = Vec::with_capacity(n);
    for rec in 0..n {
        let record = &bytes[rec * RECORD..(rec + 1) * RECORD];
        let label = record[0];
        if label > 9 {
            return Err(Error::CifarFormat(format!(
                "{}: record {rec} has label {label} > 9",
                path.display()
            )));
        }
        labels.push(u32::from(label));
        let planes = &record[1..];
        let img = &mut pixels[rec * PLANE * 3..(rec + 1) * PLANE * 3];
        for p in 0..PLANE {
            for ch in 0..3 {
                img[p * 3 + ch] = planes[ch * PLANE + p] as f64 / 255.0;
            }
        }
    }
    ImageSet::new(SIDE, SIDE, 3, pixels, labels)
}

/// Concatenates several batch files.
pub fn load_cifar_batches(paths: &[PathBuf]) -> Result<ImageSet> {
    if paths.is_empty() {
        return Err(Error::InvalidInput("no CIFAR batch files given".into()));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let batch = load_cifar_batch(path)?;
        pixels.extend(batch.pixels);
        labels.extend(batch.labels);
    }
    ImageSet::new(SIDE, SIDE, 3, pixels, labels)
}
