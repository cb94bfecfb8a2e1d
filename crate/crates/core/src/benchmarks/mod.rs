//! MNIST ingestion, permuted task streams and the online training loop.

mod mnist;
mod run;
mod stream;

pub use mnist::{load_mnist, load_mnist_dir, MnistSplits, IMAGE_MAGIC, LABEL_MAGIC};
pub use run::{run_online, RunLog, Schedule, TaskOutcome, TaskRecord, Trainer};
pub use stream::{apply_permutation, invert_permutation, permuted_stream, TaskStream};

use crate::autodiff::{argmax_rows, forward, Tensor};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::scalar::Scalar;

/// Environment variable naming the directory that holds the IDX files.
pub const DATA_DIR_ENV: &str = "PLASTICITY_DATA_DIR";

/// Rows evaluated per forward pass.
const EVAL_CHUNK: usize = 1000;

/// Images scaled to `[0, 1]`, one per row, with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    pub images: Tensor<S>,
    pub labels: Vec<usize>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(images: Tensor<S>, labels: Vec<usize>) -> Result<Self> {
        if images.shape().len() != 2 || images.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.shape().first().copied().unwrap_or(0),
                labels: labels.len(),
            });
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.images.cols()
    }

    /// Rows `idx` with pixels rearranged so that `x[b, j] = image[idx[b], perm[j]]`.
    pub fn batch(&self, idx: &[usize], perm: Option<&[usize]>) -> (Tensor<S>, Vec<usize>) {
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        let x = match perm {
            None => self.images.gather_rows(idx),
            Some(p) => {
                let d = self.features();
                let mut data = Vec::with_capacity(idx.len() * d);
                for &i in idx {
                    let row = self.images.row(i);
                    data.extend(p.iter().map(|&j| row[j]));
                }
                Tensor::from_vec(&[idx.len(), d], data).expect("gathered shape")
            }
        };
        (x, labels)
    }

    /// First `n` examples.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        let (images, labels) = self.batch(&idx, None);
        Self { images, labels }
    }
}

/// Argmax accuracy; logit ties go to the lowest class index.
pub fn evaluate<S: Scalar>(net: &Network<S>, data: &Dataset<S>) -> Result<f64> {
    evaluate_permuted(net, data, None)
}

/// Accuracy with every image's pixels permuted by `perm` first.
pub fn evaluate_permuted<S: Scalar>(
    net: &Network<S>,
    data: &Dataset<S>,
    perm: Option<&[usize]>,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk, perm);
        let logits = forward(net, &x)?.logits;
        correct += argmax_rows(&logits)
            .iter()
            .zip(&y)
            .filter(|(p, t)| p == t)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}
