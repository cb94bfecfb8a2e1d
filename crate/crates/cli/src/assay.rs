//! `assay`: reset-cost lesion study over saved checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use plasticity::assay::{run_assay, AssayConfig, AssayInput, AssayReport, ShockMetric};
use plasticity::model::load_checkpoint;
use plasticity::utilities::UtilityKind;

use crate::data;
use crate::fail::{Failure, Result};

pub const CSV_FILE: &str = "assay.csv";
pub const JSON_FILE: &str = "assay.json";
pub const CONFIG_FILE: &str = "assay_config.txt";

/// Keys of the assay config that may differ between aggregated assays.
pub const SEED_KEYS: [&str; 2] = ["seed", "checkpoints"];

pub fn parse_kinds(text: &str) -> Result<Vec<UtilityKind>> {
    if text.trim() == "all" {
        return Ok(UtilityKind::ALL.to_vec());
    }
    text.split(',')
        .map(|k| k.parse::<UtilityKind>().map_err(Failure::from))
        .collect()
}

pub fn parse_metrics(text: &str) -> Result<Vec<ShockMetric>> {
    if text.trim() == "all" {
        return Ok(ShockMetric::ALL.to_vec());
    }
    text.split(',')
        .map(|k| k.parse::<ShockMetric>().map_err(Failure::from))
        .collect()
}

/// CSV-safe label: the run id recorded in the checkpoint (if any) plus the file stem.
fn label_of(path: &Path, run_id: Option<&str>) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let label = match run_id {
        Some(id) => format!("{id}/{stem}"),
        None => stem,
    };
    label.replace([',', '\n', '\r'], "_")
}

pub fn load_inputs(paths: &[PathBuf]) -> Result<Vec<AssayInput<f64>>> {
    if paths.is_empty() {
        return Err(Failure::usage("assay needs at least one checkpoint"));
    }
    paths
        .iter()
        .map(|p| {
            if !p.is_file() {
                return Err(Failure::new(
                    "io",
                    format!("{}: checkpoint not found", p.display()),
                ));
            }
            let ckpt = load_checkpoint::<f64>(p)?;
            let run_id = ckpt
                .extra
                .get("run_id")
                .and_then(|v| v.as_str())
                .map(str::to_owned);
            Ok(AssayInput::from_checkpoint(
                label_of(p, run_id.as_deref()),
                ckpt,
            )?)
        })
        .collect()
}

pub fn config_text(cfg: &AssayConfig, checkpoints: &[PathBuf]) -> String {
    let list = |v: Vec<&str>| v.join(",");
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("calibration", cfg.calibration.to_string());
    kv("probe", cfg.probe.to_string());
    kv("fraction", cfg.fraction.to_string());
    kv("warmup_batch", cfg.warmup_batch.to_string());
    kv("decay", cfg.decay.to_string());
    kv(
        "utilities",
        list(cfg.kinds.iter().map(|k| k.name()).collect()),
    );
    kv(
        "metrics",
        list(cfg.metrics.iter().map(|m| m.name()).collect()),
    );
    kv("per_layer", cfg.per_layer.to_string());
    kv("seed", cfg.seed.to_string());
    kv(
        "checkpoints",
        checkpoints
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    s
}

/// Runs the assay and writes the CSV, the JSON summary and the resolved config into `out`.
pub fn run(
    cfg: &AssayConfig,
    checkpoints: &[PathBuf],
    data_dir: &Path,
    out: &Path,
    quiet: bool,
) -> Result<AssayReport> {
    cfg.validate()?;
    let inputs = load_inputs(checkpoints)?;
    let test = data::load_test::<f64>(data_dir)?;
    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
    let write = |name: &str, text: &str| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Failure::io(&p, e))
    };
    write(CONFIG_FILE, &config_text(cfg, checkpoints))?;

    let mut report: Option<AssayReport> = None;
    for input in &inputs {
        let one = run_assay(std::slice::from_ref(input), &test, cfg)?;
        if !quiet {
            eprintln!("assayed {}", input.label);
        }
        match report.as_mut() {
            Some(r) => {
                r.rows.extend(one.rows);
                r.checkpoints.extend(one.checkpoints);
            }
            None => report = Some(one),
        }
    }
    let report = report.expect("at least one checkpoint");
    write(CSV_FILE, &report.to_csv())?;
    let mut json = report.summary_json()?;
    json.push('\n');
    write(JSON_FILE, &json)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_lists() {
        assert_eq!(parse_kinds("all").unwrap().len(), 7);
        assert_eq!(
            parse_kinds("gxd,activation").unwrap(),
            vec![UtilityKind::GxdTarget, UtilityKind::Activation]
        );
        assert_eq!(parse_kinds("gxd,bogus").unwrap_err().kind, "config");
        assert_eq!(parse_metrics("l1").unwrap(), vec![ShockMetric::LogitL1]);
    }

    #[test]
    fn labels_are_csv_safe() {
        assert_eq!(
            label_of(Path::new("a/ckpt_5.bin"), Some("relu,x")),
            "relu_x/ckpt_5"
        );
        assert_eq!(label_of(Path::new("ckpt_0.bin"), None), "ckpt_0");
    }

    #[test]
    fn empty_checkpoint_list_is_a_usage_error() {
        assert_eq!(load_inputs(&[]).unwrap_err().exit_code(), 2);
    }
}
