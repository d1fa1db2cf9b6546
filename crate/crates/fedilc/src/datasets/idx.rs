//! IDX binary format (big-endian), as used by the MNIST distribution.

use std::path::Path;

use crate::datasets::ImageSet;
use crate::error::{Error, Result};

const MAGIC_IMAGES: u32 = 0x0000_0803;
const MAGIC_LABELS: u32 = 0x0000_0801;

/// Parsed IDX payload: u8 images scaled to [0, 1] or raw label bytes.
#[derive(Debug, Clone)]
pub enum IdxData {
    Images {
        n: usize,
        rows: usize,
        cols: usize,
        /// Row-major `n x (rows*cols)`, values divided by 255.
        pixels: Vec<f64>,
    },
    Labels(Vec<u8>),
}

fn fail(path: &str, offset: usize, msg: impl Into<String>) -> Error {
    Error::IdxFormat {
        path: path.to_string(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &str, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(fail(
            path,
            bytes.len(),
            format!("truncated while reading {what} (need {end} bytes)"),
        ));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses IDX bytes. `path` only labels error messages.
pub fn parse_idx(bytes: &[u8], path: &str) -> Result<IdxData> {
    let magic = read_u32(bytes, 0, path, "magic")?;
    match magic {
        MAGIC_IMAGES => {
            let n = read_u32(bytes, 4, path, "image count")? as usize;
            let rows = read_u32(bytes, 8, path, "row count")? as usize;
            let cols = read_u32(bytes, 12, path, "column count")? as usize;
            let need = 16 + n * rows * cols;
            if bytes.len() < need {
                return Err(fail(
                    path,
                    bytes.len(),
                    format!("truncated pixel data (need {need} bytes)"),
                ));
            }
            let pixels = bytes[16..need].iter().map(|&b| b as f64 / 255.0).collect();
            Ok(IdxData::Images {
                n,
                rows,
                cols,
                pixels,
            })
        }
        MAGIC_LABELS => {
            let n = read_u32(bytes, 4, path, "label count")? as usize;
            let need = 8 + n;
            if bytes.len() < need {
                return Err(fail(
                    path,
                    bytes.len(),
                    format!("truncated label data (need {need} bytes)"),
                ));
            }
            Ok(IdxData::Labels(bytes[8..need].to_vec()))
        }
        other => Err(fail(path, 0, format!("unknown magic 0x{other:08x}"))),
    }
}

/// Loads one IDX file (images or labels).
pub fn load_idx(path: &Path) -> Result<IdxData> {
    let bytes = std::fs::read(path)?;
    parse_idx(&bytes, &path.display().to_string())
}

/// Loads an images/labels IDX pair into a grayscale [`ImageSet`].
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<ImageSet> {
    let images = load_idx(images_path)?;
    let labels = load_idx(labels_path)?;
    let (n, rows, cols, pixels) = match images {
        IdxData::Images {
            n,
            rows,
            cols,
            pixels,
        } => (n, rows, cols, pixels),
        IdxData::Labels(_) => {
            return Err(Error::InvalidInput(format!(
                "{} holds labels, expected images",
                images_path.display()
            )));
        }
    };
    let labels = match labels {
        IdxData::Labels(l) => l,
        IdxData::Images { .. } => {
            return Err(Error::InvalidInput(format!(
                "{} holds images, expected labels",
                labels_path.display()
            )));
        }
    };
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} images vs {} labels",
            labels.len()
        )));
    }
    ImageSet::new(rows, cols, 1, pixels, labels.into_iter().map(u32::from).collect())
}
