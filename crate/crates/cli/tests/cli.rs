//! End-to-end runs of the binary on synthetic IDX files.

mod common;

use std::fs;
use std::path::Path;

use common::{checkpoints, ok, plasticity, write_mnist, SMALL};

fn train(data: &Path, out: &Path, extra: &[&str]) -> std::path::PathBuf {
    let mut args = vec![
        "train",
        "-q",
        "--tasks",
        "3",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    let dir = ok(&args, Some(data));
    Path::new(dir.trim()).to_path_buf()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn train_writes_log_checkpoints_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_mnist(&data, 160, 200);
    let dir = train(
        &data,
        &tmp.path().join("runs"),
        &["--checkpoint-tasks", "0,3"],
    );
    assert_eq!(dir.file_name().unwrap(), "relu-gxd-s0");
    let log = String::from_utf8(read(dir.join("log.csv"))).unwrap();
    assert_eq!(log.lines().count(), 4, "{log}");
    assert_eq!(checkpoints(&dir).len(), 2);
    assert!(dir.join("config.txt").is_file());
    assert!(!dir.join("resume.bin").exists());
}

#[test]
fn reruns_are_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_mnist(&data, 160, 300);
    let a = train(&data, &tmp.path().join("a"), &["--checkpoint-tasks", "3"]);
    let b = train(&data, &tmp.path().join("b"), &["--checkpoint-tasks", "3"]);
    for f in ["log.csv", "resets.csv", "utilities.csv"] {
        assert!(read(a.join(f)) == read(b.join(f)), "{f} differs");
    }
    let ckpt = checkpoints(&a).pop().unwrap();
    let assay = |out: &Path| {
        ok(
            &[
                "assay",
                "-q",
                "--calibration",
                "120",
                "--probe",
                "120",
                "--out",
                out.to_str().unwrap(),
                ckpt.to_str().unwrap(),
            ],
            Some(&data),
        );
    };
    assay(&tmp.path().join("x"));
    assay(&tmp.path().join("y"));
    for f in ["assay.csv", "assay.json"] {
        assert!(
            read(tmp.path().join("x").join(f)) == read(tmp.path().join("y").join(f)),
            "{f} differs"
        );
    }
    // 7 utilities plus the oracle, for each of the two metrics.
    let csv = String::from_utf8(read(tmp.path().join("x/assay.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + 16);
}

#[test]
fn resume_from_rolling_checkpoint_matches_uninterrupted() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_mnist(&data, 160, 200);
    let flags = ["--set", "tasks=4", "--checkpoint-tasks", "2", "--resume"];
    let full = train(&data, &tmp.path().join("full"), &flags);
    let dir = train(&data, &tmp.path().join("part"), &flags);
    // Pretend the run died after task 2: its rolling checkpoint holds the same
    // state as the task-2 checkpoint, and rows past it must be rewritten.
    fs::copy(&checkpoints(&dir)[0], dir.join("resume.bin")).unwrap();
    fs::remove_file(dir.join("utilities.csv")).unwrap();
    // A different spelling of the same output directory still resumes.
    train(&data, &tmp.path().join("full/../part"), &flags);
    for f in ["log.csv", "resets.csv", "utilities.csv"] {
        assert!(read(full.join(f)) == read(dir.join(f)), "{f} differs");
    }
    assert!(!dir.join("resume.bin").exists());
}

#[test]
fn unknown_utility_is_a_config_error_listing_valid_names() {
    let tmp = tempfile::tempdir().unwrap();
    let out = plasticity(
        &[
            "train",
            "--utility",
            "nosuch",
            "--data-dir",
            tmp.path().to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: config:"), "{err}");
    for name in [
        "activation",
        "contribution",
        "mc-adaptable-contribution",
        "loss-gradient",
        "gxd",
        "gxi",
        "gxd-all-logit",
    ] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn usage_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = plasticity(&["assay"], None);
    assert_eq!(out.status.code(), Some(2));
    let out = plasticity(&["train", "--tasks", "1"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("PLASTICITY_DATA_DIR"));
    let out = plasticity(
        &[
            "train",
            "--tasks",
            "1",
            "--out",
            tmp.path().to_str().unwrap(),
        ],
        Some(tmp.path()),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-images-idx3-ubyte"));
    let out = plasticity(
        &["assay", tmp.path().join("missing.bin").to_str().unwrap()],
        Some(tmp.path()),
    );
    assert_eq!(out.status.code(), Some(1));
    let out = plasticity(&["report"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_aggregates_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_mnist(&data, 160, 200);
    let runs = tmp.path().join("runs");
    let a = train(&data, &runs, &["--seed", "0"]);
    let b = train(&data, &runs, &["--seed", "1"]);
    let out = tmp.path().join("report");
    let series = format!("relu={},{}", a.display(), b.display());
    ok(
        &[
            "report",
            "--window",
            "2",
            "--svg",
            "--out",
            out.to_str().unwrap(),
            &series,
        ],
        None,
    );
    let summary = String::from_utf8(read(out.join("summary.csv"))).unwrap();
    assert!(summary.starts_with("series,x,metric,n,mean,se\n"));
    assert!(summary.lines().skip(1).all(|l| l.starts_with("relu,")));
    let fin = String::from_utf8(read(out.join("final.csv"))).unwrap();
    assert!(
        fin.lines().any(|l| l.starts_with("relu,test_acc,2,2,")),
        "{fin}"
    );
    assert!(out.join("summary.svg").is_file());

    // Different hyperparameters cannot be pooled into one series.
    let c = train(&data, &runs, &["--seed", "2", "--set", "lr=0.05"]);
    let res = plasticity(
        &[
            "report",
            "--out",
            out.to_str().unwrap(),
            a.to_str().unwrap(),
            c.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(
        res.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert!(String::from_utf8_lossy(&res.stderr).contains("lr"));
}
