//! Online continual training over a task stream.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate_permuted, MnistSplits, TaskStream};
use crate::cbp::{ContinualBackprop, ResetConfig, ResetEvent};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Network, NetworkSpec};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;
use crate::utilities::UtilityKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub tasks: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Fill the `wall_ms` column. Off by default so reruns stay byte-identical.
    pub record_wall_time: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            tasks: 200,
            batch_size: 16,
            lr: 0.3,
            momentum: 0.0,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task: usize,
    pub test_acc: f64,
    /// Fraction of training examples predicted correctly before their update.
    pub train_acc: f64,
    pub resets_per_layer: Vec<u64>,
    pub wall_ms: Option<u128>,
}

impl TaskRecord {
    pub fn resets_total(&self) -> u64 {
        self.resets_per_layer.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub records: Vec<TaskRecord>,
}

impl RunLog {
    pub const CSV_HEADER: &'static str = "task,test_acc,train_acc,resets_total,wall_ms";

    pub fn csv_row(r: &TaskRecord) -> String {
        let wall = r.wall_ms.map(|w| w.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{wall}",
            r.task,
            r.test_acc,
            r.train_acc,
            r.resets_total()
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            let _ = writeln!(out, "{}", Self::csv_row(r));
        }
        out
    }

    /// Mean test accuracy over the last `k` recorded tasks.
    pub fn final_mean(&self, k: usize) -> Option<f64> {
        let k = k.min(self.records.len());
        (k > 0).then(|| {
            self.records[self.records.len() - k..]
                .iter()
                .map(|r| r.test_acc)
                .sum::<f64>()
                / k as f64
        })
    }
}

#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub record: TaskRecord,
    pub resets: Vec<ResetEvent>,
}

/// Network, learner state and data-order stream of one run.
#[derive(Debug, Clone)]
pub struct Trainer<S> {
    pub net: Network<S>,
    pub cbp: ContinualBackprop<S>,
    shuffle: ChaCha8Rng,
    data_seed: u64,
    /// Completed tasks.
    pub task: usize,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(
        spec: &NetworkSpec,
        kind: UtilityKind,
        reset: ResetConfig,
        data_seed: u64,
    ) -> Result<Self> {
        let net = Network::build(spec)?;
        let cbp = ContinualBackprop::new(&net, kind, reset)?;
        Ok(Self {
            net,
            cbp,
            shuffle: rng::stream(data_seed, Stream::Shuffle),
            data_seed,
            task: 0,
        })
    }

    /// Trains one epoch on `perm`-permuted training data, then evaluates on
    /// the equally permuted test split.
    pub fn run_task(
        &mut self,
        data: &MnistSplits<S>,
        perm: &[usize],
        schedule: &Schedule,
    ) -> Result<TaskOutcome> {
        if schedule.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if perm.len() != data.train.features() || perm.len() != self.net.input_width() {
            return Err(Error::shape(
                "task permutation",
                &[self.net.input_width()],
                &[perm.len()],
            ));
        }
        let start = Instant::now();
        let (lr, momentum) = (S::of(schedule.lr), S::of(schedule.momentum));
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut self.shuffle);
        let mut correct = 0usize;
        let mut per_layer = vec![0u64; self.net.hidden_count()];
        let mut resets = Vec::new();
        for chunk in order.chunks(schedule.batch_size) {
            let (x, y) = data.train.batch(chunk, Some(perm));
            let out = self.cbp.step(&mut self.net, &x, &y, lr, momentum)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            correct += out.correct;
            for e in &out.resets {
                per_layer[e.layer] += 1;
            }
            resets.extend(out.resets);
        }
        let test_acc = evaluate_permuted(&self.net, &data.test, Some(perm))?;
        let record = TaskRecord {
            task: self.task,
            test_acc,
            train_acc: correct as f64 / data.train.len().max(1) as f64,
            resets_per_layer: per_layer,
            wall_ms: schedule
                .record_wall_time
                .then(|| start.elapsed().as_millis()),
        };
        self.task += 1;
        Ok(TaskOutcome { record, resets })
    }

    /// Runs the remaining tasks of `stream` up to `schedule.tasks`, calling
    /// `on_task` after each.
    pub fn run(
        &mut self,
        stream: &TaskStream,
        schedule: &Schedule,
        data: &MnistSplits<S>,
        mut on_task: impl FnMut(&Trainer<S>, &TaskOutcome) -> Result<()>,
    ) -> Result<RunLog> {
        let end = schedule.tasks.min(stream.len());
        let mut log = RunLog::default();
        while self.task < end {
            let outcome = self.run_task(data, stream.task(self.task), schedule)?;
            on_task(self, &outcome)?;
            log.records.push(outcome.record);
        }
        Ok(log)
    }

    pub fn checkpoint(&self) -> Checkpoint<S> {
        let mut ckpt = Checkpoint::new(self.net.clone(), self.cbp.steps());
        ckpt.task = self.task as u64;
        ckpt.rng.insert("reset".into(), self.cbp.rng_state());
        ckpt.rng
            .insert("shuffle".into(), rng::RngState::capture(&self.shuffle));
        ckpt.tracker = Some(self.cbp.tracker().clone());
        ckpt.extra.insert("data_seed".into(), self.data_seed.into());
        ckpt.extra.insert(
            "reset_config".into(),
            serde_json::to_value(self.cbp.config()).expect("reset config serializes"),
        );
        ckpt
    }

    pub fn from_checkpoint(ckpt: Checkpoint<S>) -> Result<Self> {
        let missing = |what: &str| Error::Config(format!("checkpoint lacks {what}"));
        let reset: ResetConfig = serde_json::from_value(
            ckpt.extra
                .get("reset_config")
                .cloned()
                .ok_or_else(|| missing("reset_config"))?,
        )
        .map_err(|e| Error::Config(format!("checkpoint reset_config: {e}")))?;
        let data_seed = ckpt
            .extra
            .get("data_seed")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| missing("data_seed"))?;
        let tracker = ckpt.tracker.ok_or_else(|| missing("tracker state"))?;
        let reset_rng = ckpt.rng.get("reset").ok_or_else(|| missing("reset rng"))?;
        let shuffle = ckpt
            .rng
            .get("shuffle")
            .ok_or_else(|| missing("shuffle rng"))?
            .restore()?;
        Ok(Self {
            cbp: ContinualBackprop::restore(reset, tracker, reset_rng, ckpt.step)?,
            net: ckpt.network,
            shuffle,
            data_seed,
            task: ckpt.task as usize,
        })
    }
}

/// Builds a fresh learner and trains it over `stream`.
pub fn run_online<S: Scalar>(
    spec: &NetworkSpec,
    reset: ResetConfig,
    kind: UtilityKind,
    stream: &TaskStream,
    schedule: &Schedule,
    data: &MnistSplits<S>,
) -> Result<RunLog> {
    let mut trainer = Trainer::new(spec, kind, reset, spec.seed)?;
    trainer.run(stream, schedule, data, |_, _| Ok(()))
}
