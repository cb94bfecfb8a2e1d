use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("selector index {index} out of range for {classes} logits")]
    Selector { index: usize, classes: usize },

    #[error("unit {unit} in hidden layer {layer} does not exist")]
    Index { layer: usize, unit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown utility kind `{name}` (valid kinds: {valid})")]
    UnknownUtility { name: String, valid: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("checkpoint {path} has format version {found}, expected {expected}")]
    Version {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("bad magic number in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path} is truncated: {reason}")]
    Truncated { path: PathBuf, reason: String },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: &'static str, expected: &[usize], found: &[usize]) -> Self {
        Error::Shape {
            context,
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }
}
