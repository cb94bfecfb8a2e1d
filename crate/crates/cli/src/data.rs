//! Locating and loading the MNIST IDX files.

use std::path::{Path, PathBuf};

use plasticity::benchmarks::{load_mnist, load_mnist_dir, Dataset, MnistSplits, DATA_DIR_ENV};
use plasticity::Scalar;

use crate::fail::{Failure, Result};

pub const FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// `--data-dir` if given, else the environment variable.
pub fn data_dir(flag: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.to_path_buf());
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
        _ => Err(Failure::new(
            "data",
            format!("no data directory: pass --data-dir or set {DATA_DIR_ENV}"),
        )),
    }
}

fn require(dir: &Path, files: &[&str]) -> Result<()> {
    let missing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| !dir.join(f).is_file())
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    Err(Failure::new(
        "data",
        format!(
            "missing data files in {}: {}",
            dir.display(),
            missing.join(", ")
        ),
    ))
}

pub fn load<S: Scalar>(
    dir: &Path,
    train_limit: usize,
    test_limit: usize,
) -> Result<MnistSplits<S>> {
    require(dir, &FILES)?;
    let mut splits: MnistSplits<S> = load_mnist_dir(dir)?;
    if train_limit > 0 {
        splits.train = splits.train.head(train_limit);
    }
    if test_limit > 0 {
        splits.test = splits.test.head(test_limit);
    }
    Ok(splits)
}

/// Test split only.
pub fn load_test<S: Scalar>(dir: &Path) -> Result<Dataset<S>> {
    require(dir, &FILES[2..])?;
    Ok(load_mnist(dir.join(FILES[2]), dir.join(FILES[3]))?)
}
