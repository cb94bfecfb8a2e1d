//! Reset-cost lesion assay.
//!
//! Each utility ranks the hidden units of a frozen network after a warm-up
//! pass over a calibration set. Every unit is then clamped, one at a time, to
//! its warm-up reference on a disjoint probe set and the resulting output
//! perturbation is recorded. Rankings are scored by Spearman correlation with
//! the realized perturbation and by the mean shock of their bottom fraction.

mod shock;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use shock::{
    ascending_order, bottom_count, clamped_forward, clamped_logits, measure_shock,
    measure_shock_traced, shock_at_k, shock_between, ShockMeasurement,
};

use crate::autodiff::{forward, Tensor};
use crate::benchmarks::{permuted_stream, Dataset};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Network};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;
use crate::stats;
use crate::utilities::{UnitTracker, UtilityGradients, UtilityKind, DEFAULT_DECAY};

pub const CSV_HEADER: &str = "checkpoint,utility,metric,spearman,shock_at_5,oracle_shock_at_5";
pub const ORACLE: &str = "oracle";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShockMetric {
    LogitL1,
    Kl,
}

impl ShockMetric {
    pub const ALL: [ShockMetric; 2] = [ShockMetric::LogitL1, ShockMetric::Kl];

    pub fn name(self) -> &'static str {
        match self {
            ShockMetric::LogitL1 => "logit-l1",
            ShockMetric::Kl => "kl",
        }
    }

    pub fn of(self, m: &ShockMeasurement) -> f64 {
        match self {
            ShockMetric::LogitL1 => m.logit_l1,
            ShockMetric::Kl => m.kl,
        }
    }
}

impl fmt::Display for ShockMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShockMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "logit-l1" | "l1" => Ok(ShockMetric::LogitL1),
            "kl" => Ok(ShockMetric::Kl),
            _ => Err(Error::Config(format!(
                "unknown shock metric `{s}` (valid: logit-l1, kl)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssayConfig {
    pub calibration: usize,
    pub probe: usize,
    /// Bottom fraction of each layer used by Shock@K.
    pub fraction: f64,
    /// Minibatch size of the calibration warm-up.
    pub warmup_batch: usize,
    pub decay: f64,
    pub kinds: Vec<UtilityKind>,
    pub metrics: Vec<ShockMetric>,
    /// Average per-layer Spearman values instead of pooling units across layers.
    pub per_layer: bool,
    /// Seeds the calibration/probe split.
    pub seed: u64,
}

impl Default for AssayConfig {
    fn default() -> Self {
        Self {
            calibration: 2048,
            probe: 2048,
            fraction: 0.05,
            warmup_batch: 64,
            decay: DEFAULT_DECAY,
            kinds: UtilityKind::ALL.to_vec(),
            metrics: ShockMetric::ALL.to_vec(),
            per_layer: false,
            seed: 0,
        }
    }
}

impl AssayConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.calibration == 0 || self.probe == 0 {
            return bad("calibration and probe sizes must be positive");
        }
        if self.warmup_batch == 0 {
            return bad("warm-up batch size must be positive");
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad("shock fraction must lie in (0, 1]");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad("decay must lie in (0, 1)");
        }
        if self.kinds.is_empty() || self.metrics.is_empty() {
            return bad("at least one utility and one metric are required");
        }
        Ok(())
    }

    /// Disjoint calibration and probe indices into a set of `n` examples.
    pub fn split(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if self.calibration + self.probe > n {
            return Err(Error::Config(format!(
                "calibration ({}) plus probe ({}) exceeds the {n} available examples",
                self.calibration, self.probe
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(self.seed, Stream::AssaySplit));
        let probe = idx[self.calibration..self.calibration + self.probe].to_vec();
        idx.truncate(self.calibration);
        Ok((idx, probe))
    }
}

/// One frozen network to assay, with the input permutation its task used.
#[derive(Debug, Clone)]
pub struct AssayInput<S> {
    pub label: String,
    /// Key the JSON summary groups by (e.g. the checkpoint's task).
    pub group: String,
    pub network: Network<S>,
    pub permutation: Option<Vec<usize>>,
}

impl<S: Scalar> AssayInput<S> {
    /// Reads the permutation from a training checkpoint. A checkpoint taken
    /// after `k` tasks is assayed on task `k - 1` (task 0 for the initial one).
    pub fn from_checkpoint(label: String, ckpt: Checkpoint<S>) -> Result<Self> {
        let width = ckpt.network.input_width();
        let permutation = match ckpt.extra.get("perm_seed").and_then(|v| v.as_u64()) {
            Some(seed) => {
                let t = ckpt.task.max(1) as usize - 1;
                Some(permuted_stream(seed, t + 1, width)?.task(t).to_vec())
            }
            None => None,
        };
        Ok(Self {
            label,
            group: format!("task{}", ckpt.task),
            network: ckpt.network,
            permutation,
        })
    }
}

/// Everything measured on one network.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointAssay {
    pub label: String,
    pub group: String,
    /// `scores[kind][layer][unit]`, in the order of `AssayConfig::kinds`.
    pub scores: Vec<Vec<Vec<f64>>>,
    pub references: Vec<Vec<f64>>,
    /// `shocks[layer][unit]`.
    pub shocks: Vec<Vec<ShockMeasurement>>,
}

impl CheckpointAssay {
    pub fn shock_values(&self, metric: ShockMetric) -> Vec<Vec<f64>> {
        self.shocks
            .iter()
            .map(|l| l.iter().map(|m| metric.of(m)).collect())
            .collect()
    }

    pub fn scores_of(&self, kinds: &[UtilityKind], kind: UtilityKind) -> Option<&Vec<Vec<f64>>> {
        kinds
            .iter()
            .position(|&k| k == kind)
            .map(|i| &self.scores[i])
    }
}

/// Spearman ρ of scores against shocks, pooled over layers or averaged per layer.
pub fn ranking_correlation(
    scores: &[Vec<f64>],
    shocks: &[Vec<f64>],
    per_layer: bool,
) -> Option<f64> {
    if per_layer {
        let per: Vec<f64> = scores
            .iter()
            .zip(shocks)
            .filter_map(|(s, m)| stats::spearman(s, m))
            .collect();
        stats::mean(&per)
    } else {
        let s: Vec<f64> = scores.concat();
        let m: Vec<f64> = shocks.concat();
        stats::spearman(&s, &m)
    }
}

/// Fresh trackers for `kinds`, updated once over `calibration` in batches.
pub fn warm_trackers<S: Scalar>(
    net: &Network<S>,
    calibration: &Tensor<S>,
    labels: &[usize],
    kinds: &[UtilityKind],
    batch: usize,
    decay: f64,
) -> Result<Vec<UnitTracker<S>>> {
    if calibration.rows() == 0 || calibration.rows() != labels.len() {
        return Err(Error::shape(
            "calibration set",
            &[labels.len()],
            &[calibration.rows()],
        ));
    }
    let mut trackers: Vec<_> = kinds
        .iter()
        .map(|&k| UnitTracker::new(k, net, S::of(decay)))
        .collect();
    let idx: Vec<usize> = (0..labels.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let x = calibration.gather_rows(chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let trace = forward(net, &x)?;
        let grads = UtilityGradients::compute(kinds, &trace, net, &y, None)?;
        for t in &mut trackers {
            t.observe(&trace, net, &grads)?;
        }
    }
    Ok(trackers)
}

/// Warm-up on `calibration`, then clamp every hidden unit on `probe`.
pub fn assay_network<S: Scalar>(
    net: &Network<S>,
    calibration: &Tensor<S>,
    labels: &[usize],
    probe: &Tensor<S>,
    config: &AssayConfig,
) -> Result<CheckpointAssay> {
    config.validate()?;
    let trackers = warm_trackers(
        net,
        calibration,
        labels,
        &config.kinds,
        config.warmup_batch,
        config.decay,
    )?;
    let refs = trackers[0].references();
    let scores = trackers
        .iter()
        .map(|t| {
            (0..net.hidden_count())
                .map(|l| t.rank_scores(l).iter().map(|v| v.as_f64()).collect())
                .collect()
        })
        .collect();
    if probe.rows() == 0 {
        return Err(Error::Config("probe set is empty".into()));
    }
    let trace = forward(net, probe)?;
    let mut shocks = Vec::with_capacity(net.hidden_count());
    for (l, layer_refs) in refs.iter().enumerate() {
        let row = layer_refs
            .iter()
            .enumerate()
            .map(|(i, &r)| measure_shock_traced(&trace, net, l, i, r))
            .collect::<Result<Vec<_>>>()?;
        shocks.push(row);
    }
    Ok(CheckpointAssay {
        label: String::new(),
        group: String::new(),
        scores,
        references: refs
            .iter()
            .map(|l| l.iter().map(|v| v.as_f64()).collect())
            .collect(),
        shocks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssayRow {
    pub checkpoint: String,
    pub group: String,
    pub utility: String,
    pub metric: ShockMetric,
    pub spearman: Option<f64>,
    pub shock_at_5: f64,
    pub oracle_shock_at_5: f64,
}

impl AssayRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.checkpoint,
            self.utility,
            self.metric,
            self.spearman.map(|v| v.to_string()).unwrap_or_default(),
            self.shock_at_5,
            self.oracle_shock_at_5
        )
    }
}

/// Rows for one assayed network: every utility under every metric, then
/// one oracle row per metric.
pub fn rows_for(assay: &CheckpointAssay, config: &AssayConfig) -> Result<Vec<AssayRow>> {
    let mut rows = Vec::new();
    for &metric in &config.metrics {
        let shocks = assay.shock_values(metric);
        let oracle = shock_at_k(&shocks, &shocks, config.fraction)?;
        let row = |utility: String, spearman, shock_at_5| AssayRow {
            checkpoint: assay.label.clone(),
            group: assay.group.clone(),
            utility,
            metric,
            spearman,
            shock_at_5,
            oracle_shock_at_5: oracle,
        };
        for (kind, scores) in config.kinds.iter().zip(&assay.scores) {
            rows.push(row(
                kind.name().to_string(),
                ranking_correlation(scores, &shocks, config.per_layer),
                shock_at_k(scores, &shocks, config.fraction)?,
            ));
        }
        rows.push(row(
            ORACLE.to_string(),
            ranking_correlation(&shocks, &shocks, config.per_layer),
            oracle,
        ));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssayReport {
    pub config: AssayConfig,
    pub rows: Vec<AssayRow>,
    pub checkpoints: Vec<CheckpointAssay>,
}

/// Mean and standard error of one quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub n: usize,
    pub mean: Option<f64>,
    pub se: Option<f64>,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            n: xs.len(),
            mean: stats::mean(xs),
            se: stats::standard_error(xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryEntry {
    pub utility: String,
    pub metric: ShockMetric,
    pub spearman: Estimate,
    pub shock_at_5: Estimate,
    pub oracle_shock_at_5: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub group: String,
    pub entries: Vec<SummaryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssaySummary {
    pub checkpoints: usize,
    pub overall: Vec<SummaryEntry>,
    pub by_group: Vec<GroupSummary>,
}

fn summarize(rows: &[&AssayRow]) -> Vec<SummaryEntry> {
    let mut keys: Vec<(&str, ShockMetric)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.utility.as_str(), r.metric)) {
            keys.push((&r.utility, r.metric));
        }
    }
    keys.into_iter()
        .map(|(utility, metric)| {
            let sel: Vec<&&AssayRow> = rows
                .iter()
                .filter(|r| r.utility == utility && r.metric == metric)
                .collect();
            let spearman: Vec<f64> = sel.iter().filter_map(|r| r.spearman).collect();
            let shock: Vec<f64> = sel.iter().map(|r| r.shock_at_5).collect();
            let oracle: Vec<f64> = sel.iter().map(|r| r.oracle_shock_at_5).collect();
            SummaryEntry {
                utility: utility.to_string(),
                metric,
                spearman: Estimate::of(&spearman),
                shock_at_5: Estimate::of(&shock),
                oracle_shock_at_5: Estimate::of(&oracle),
            }
        })
        .collect()
}

impl AssayReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> AssaySummary {
        let all: Vec<&AssayRow> = self.rows.iter().collect();
        let mut groups: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !groups.contains(&r.group.as_str()) {
                groups.push(&r.group);
            }
        }
        AssaySummary {
            checkpoints: self.checkpoints.len(),
            overall: summarize(&all),
            by_group: groups
                .into_iter()
                .map(|g| GroupSummary {
                    group: g.to_string(),
                    entries: summarize(
                        &all.iter()
                            .copied()
                            .filter(|r| r.group == g)
                            .collect::<Vec<_>>(),
                    ),
                })
                .collect(),
        }
    }

    pub fn summary_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.summary())
            .map_err(|e| Error::Config(format!("summary serialization: {e}")))
    }

    /// Summary entry for one utility and metric, over every checkpoint.
    pub fn overall(&self, utility: &str, metric: ShockMetric) -> Option<SummaryEntry> {
        self.summary()
            .overall
            .into_iter()
            .find(|e| e.utility == utility && e.metric == metric)
    }
}

/// Assays every input on the same calibration/probe split of `data`.
pub fn run_assay<S: Scalar>(
    inputs: &[AssayInput<S>],
    data: &Dataset<S>,
    config: &AssayConfig,
) -> Result<AssayReport> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::Config("no checkpoints to assay".into()));
    }
    let (calib_idx, probe_idx) = config.split(data.len())?;
    let mut report = AssayReport {
        config: config.clone(),
        rows: Vec::new(),
        checkpoints: Vec::new(),
    };
    for input in inputs {
        let perm = input.permutation.as_deref();
        let (calib, labels) = data.batch(&calib_idx, perm);
        let (probe, _) = data.batch(&probe_idx, perm);
        let mut assay = assay_network(&input.network, &calib, &labels, &probe, config)?;
        assay.label = input.label.clone();
        assay.group = input.group.clone();
        report.rows.extend(rows_for(&assay, config)?);
        report.checkpoints.push(assay);
    }
    Ok(report)
}
