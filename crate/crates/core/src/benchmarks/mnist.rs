//! IDX file ingestion.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

const CLASSES: usize = 10;

#[derive(Debug, Clone)]
pub struct MnistSplits<S> {
    pub train: Dataset<S>,
    pub test: Dataset<S>,
}

fn header(bytes: &[u8], path: &Path, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 * (1 + dims);
    if bytes.len() < need {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            reason: format!("header needs {need} bytes, file has {}", bytes.len()),
        });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found: word(0),
        });
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

fn body<'a>(bytes: &'a [u8], path: &Path, offset: usize, len: usize) -> Result<&'a [u8]> {
    match bytes.len().checked_sub(offset) {
        Some(have) if have >= len => Ok(&bytes[offset..offset + len]),
        have => Err(Error::Truncated {
            path: path.to_path_buf(),
            reason: format!("expected {len} data bytes, found {}", have.unwrap_or(0)),
        }),
    }
}

/// Reads an image/label IDX pair. Pixel bytes map to `[0, 1]` by `/ 255`.
pub fn load_mnist<S: Scalar>(
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
) -> Result<Dataset<S>> {
    let (ip, lp) = (image_path.as_ref(), label_path.as_ref());
    let images = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = fs::read(lp).map_err(|e| Error::io(lp, e))?;

    let dims = header(&images, ip, IMAGE_MAGIC, 3)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = body(&images, ip, 16, n * rows * cols)?;
    let [count] = header(&labels, lp, LABEL_MAGIC, 1)?[..] else {
        unreachable!()
    };
    if count != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: count,
        });
    }
    let raw_labels = body(&labels, lp, 8, count)?;
    if let Some(&bad) = raw_labels.iter().find(|&&y| y as usize >= CLASSES) {
        return Err(Error::Corrupt {
            path: lp.to_path_buf(),
            reason: format!("label {bad} outside 0..{CLASSES}"),
        });
    }

    let scale = S::one() / S::of(255.0);
    let data = pixels
        .iter()
        .map(|&p| S::of(f64::from(p)) * scale)
        .collect();
    Dataset::new(
        Tensor::from_vec(&[n, rows * cols], data)?,
        raw_labels.iter().map(|&y| y as usize).collect(),
    )
}

/// Loads the four standard files from `dir`.
pub fn load_mnist_dir<S: Scalar>(dir: impl AsRef<Path>) -> Result<MnistSplits<S>> {
    let dir = dir.as_ref();
    Ok(MnistSplits {
        train: load_mnist(
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        )?,
        test: load_mnist(
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        )?,
    })
}
