//! IDX (MNIST) readers.

use std::path::Path;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
        .ok_or_else(|| Error::Format("truncated header".into()))
}

/// Returns `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let (n, rows, cols) = (be_u32(bytes, 4)? as usize, be_u32(bytes, 8)? as usize, be_u32(bytes, 12)? as usize);
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(Error::Format(format!("{} pixel bytes for {n}x{rows}x{cols} images", body.len())));
    }
    Ok((n, rows, cols, body))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!("label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format(format!("{} label bytes for {n} labels", body.len())));
    }
    Ok(body)
}

/// Average-pools a `rows x cols` image onto a `side x side` grid; each output
/// cell averages the source pixels whose centre falls inside it.
fn pool(pixels: &[u8], rows: usize, cols: usize, side: usize) -> Vec<f64> {
    let mut sum = vec![0.0; side * side];
    let mut count = vec![0usize; side * side];
    for r in 0..rows {
        let pr = r * side / rows;
        for c in 0..cols {
            let pc = c * side / cols;
            sum[pr * side + pc] += pixels[r * cols + c] as f64 / 255.0;
            count[pr * side + pc] += 1;
        }
    }
    sum.iter().zip(&count).map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 }).collect()
}

/// Decodes paired IDX buffers; `input_dim`, if given, must be a square no
/// larger than the image and triggers average pooling.
pub fn decode_idx<S: Scalar>(images: &[u8], labels: &[u8], input_dim: Option<usize>, classes: usize) -> Result<Dataset<S>> {
    let (n, rows, cols, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Format(format!("{n} images but {} labels", labels.len())));
    }
    let dim = input_dim.unwrap_or(rows * cols);
    let mut features = Vec::with_capacity(n * dim);
    for i in 0..n {
        let img = &pixels[i * rows * cols..(i + 1) * rows * cols];
        if dim == rows * cols {
            features.extend(img.iter().map(|&p| S::of(p as f64 / 255.0)));
        } else {
            let side = (dim as f64).sqrt().round() as usize;
            if side * side != dim || side > rows.min(cols) {
                return Err(Error::Format(format!("cannot pool {rows}x{cols} images to {dim} features")));
            }
            features.extend(pool(img, rows, cols, side).into_iter().map(S::of));
        }
    }
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    Dataset::new(features, labels, dim, classes).map_err(|e| Error::Format(e.to_string()))
}

pub fn load_idx<S: Scalar>(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    input_dim: Option<usize>,
    classes: usize,
) -> Result<Dataset<S>> {
    let img = std::fs::read(images)?;
    let lab = std::fs::read(labels)?;
    decode_idx(&img, &lab, input_dim, classes)
}
