#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_plasticity");

fn idx_images(images: &[[u8; 784]]) -> Vec<u8> {
    let mut v = Vec::with_capacity(16 + images.len() * 784);
    for w in [0x0803u32, images.len() as u32, 28, 28] {
        v.extend_from_slice(&w.to_be_bytes());
    }
    for img in images {
        v.extend_from_slice(img);
    }
    v
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut v = Vec::with_capacity(8 + labels.len());
    for w in [0x0801u32, labels.len() as u32] {
        v.extend_from_slice(&w.to_be_bytes());
    }
    v.extend_from_slice(labels);
    v
}

/// Learnable stand-in: class `c` lights rows `2c..2c+3` plus hashed noise.
fn example(i: usize) -> ([u8; 784], u8) {
    let c = (i * 7 + i / 10) % 10;
    let mut img = [0u8; 784];
    for (p, px) in img.iter_mut().enumerate() {
        let row = p / 28;
        let noise = ((p * 2654435761 + i * 40503) >> 7) % 64;
        *px = if row >= 2 * c && row < 2 * c + 3 {
            190 + noise as u8
        } else {
            noise as u8
        };
    }
    (img, c as u8)
}

/// Writes the four IDX files for `train` and `test` synthetic examples into `dir`.
pub fn write_mnist(dir: &Path, train: usize, test: usize) {
    fs::create_dir_all(dir).unwrap();
    for (prefix, offset, n) in [("train", 0, train), ("t10k", 100_000, test)] {
        let (imgs, labels): (Vec<_>, Vec<_>) = (offset..offset + n).map(example).unzip();
        fs::write(
            dir.join(format!("{prefix}-images-idx3-ubyte")),
            idx_images(&imgs),
        )
        .unwrap();
        fs::write(
            dir.join(format!("{prefix}-labels-idx1-ubyte")),
            idx_labels(&labels),
        )
        .unwrap();
    }
}

pub fn plasticity(args: &[&str], data: Option<&Path>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("PLASTICITY_DATA_DIR");
    if let Some(d) = data {
        cmd.env("PLASTICITY_DATA_DIR", d);
    }
    cmd.output().unwrap()
}

/// Runs and asserts success; returns stdout.
pub fn ok(args: &[&str], data: Option<&Path>) -> String {
    let out = plasticity(args, data);
    assert!(
        out.status.success(),
        "plasticity {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Flags for a small, fast training run.
pub const SMALL: [&str; 12] = [
    "--hidden",
    "24x2",
    "--batch-size",
    "16",
    "--lr",
    "0.1",
    "--maturity",
    "5",
    "--replacement-rate",
    "0.01",
    "--test-limit",
    "200",
];

pub fn checkpoints(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("ckpt_"))
        })
        .collect();
    v.sort();
    v
}
