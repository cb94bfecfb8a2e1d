//! `train`: one online Permuted MNIST run.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use plasticity::benchmarks::{permuted_stream, RunLog, Schedule, Trainer};
use plasticity::cbp::ResetEvent;
use plasticity::model::{load_checkpoint, save_checkpoint, Checkpoint};
use plasticity::Scalar;

use crate::config::{Precision, RunConfig, MNIST_INPUT};
use crate::data;
use crate::fail::{Failure, Result};

pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "log.csv";
pub const RESETS_FILE: &str = "resets.csv";
pub const UTILITIES_FILE: &str = "utilities.csv";
pub const RESUME_FILE: &str = "resume.bin";

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step}.bin")
}

/// Config lines that must match for a resume; `out` only says where the run
/// directory was reached from.
fn settings(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with("out =")).collect()
}

/// Runs (or resumes) the configured run and returns its directory.
pub fn run(cfg: &RunConfig, data_dir: &Path, resume: bool, quiet: bool) -> Result<PathBuf> {
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
    let config_path = dir.join(CONFIG_FILE);
    let text = cfg.to_text();
    if resume && config_path.exists() {
        let old = fs::read_to_string(&config_path).map_err(|e| Failure::io(&config_path, e))?;
        if settings(&old) != settings(&text) {
            return Err(Failure::config(format!(
                "cannot resume {}: its {CONFIG_FILE} differs from the resolved configuration",
                dir.display()
            )));
        }
    }
    write_file(&config_path, text.as_bytes())?;
    match cfg.precision {
        Precision::F64 => run_as::<f64>(cfg, &dir, data_dir, resume, quiet)?,
        Precision::F32 => run_as::<f32>(cfg, &dir, data_dir, resume, quiet)?,
    }
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

/// Data rows of `path` whose first field passes `keep`.
fn kept_rows(path: &Path, keep: impl Fn(u64) -> bool) -> Result<Vec<String>> {
    let f = File::open(path).map_err(|e| Failure::io(path, e))?;
    let mut rows = Vec::new();
    for line in BufReader::new(f).lines().skip(1) {
        let line = line.map_err(|e| Failure::io(path, e))?;
        let first = line.split(',').next().unwrap_or("");
        let key: u64 = first.parse().map_err(|_| {
            Failure::new(
                "data",
                format!("{}: malformed row `{line}`", path.display()),
            )
        })?;
        if keep(key) {
            rows.push(line);
        }
    }
    Ok(rows)
}

struct CsvSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvSink {
    fn create(path: PathBuf, header: &str, rows: &[String]) -> Result<Self> {
        let f = File::create(&path).map_err(|e| Failure::io(&path, e))?;
        let mut sink = Self {
            out: BufWriter::new(f),
            path,
        };
        sink.line(header)?;
        for r in rows {
            sink.line(r)?;
        }
        Ok(sink)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Failure::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Failure::io(&self.path, e))
    }
}

fn checkpoint_of<S: Scalar>(trainer: &Trainer<S>, cfg: &RunConfig) -> Checkpoint<S> {
    let mut ckpt = trainer.checkpoint();
    ckpt.extra.insert("perm_seed".into(), cfg.perm_seed.into());
    ckpt.extra
        .insert("run_id".into(), cfg.run_id.clone().into());
    ckpt.extra.insert("config".into(), cfg.to_text().into());
    ckpt
}

fn run_as<S: Scalar>(
    cfg: &RunConfig,
    dir: &Path,
    data_dir: &Path,
    resume: bool,
    quiet: bool,
) -> Result<()> {
    let log_path = dir.join(LOG_FILE);
    let resume_path = dir.join(RESUME_FILE);
    if resume && !resume_path.exists() && log_path.exists() {
        let done = kept_rows(&log_path, |_| true)?.len();
        if done == cfg.tasks {
            if !quiet {
                eprintln!("{}: already complete", dir.display());
            }
            return Ok(());
        }
    }

    let data = data::load::<S>(data_dir, cfg.train_limit, cfg.test_limit)?;
    let stream = permuted_stream(cfg.perm_seed, cfg.tasks, MNIST_INPUT)?;
    let schedule = Schedule {
        tasks: cfg.tasks,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        momentum: cfg.momentum,
        record_wall_time: cfg.wall_time,
    };

    let resumed = resume && resume_path.exists();
    let mut trainer = if resumed {
        Trainer::from_checkpoint(load_checkpoint::<S>(&resume_path)?)?
    } else {
        Trainer::new(
            &cfg.network_spec(),
            cfg.utility,
            cfg.reset_config(),
            cfg.seed,
        )?
    };
    let (done_tasks, done_steps) = (trainer.task as u64, trainer.cbp.steps());
    let (log_rows, reset_rows) = if resumed {
        let resets_path = dir.join(RESETS_FILE);
        (
            kept_rows(&log_path, |t| t < done_tasks)?,
            if cfg.log_resets && resets_path.exists() {
                kept_rows(&resets_path, |s| s <= done_steps)?
            } else {
                Vec::new()
            },
        )
    } else {
        (Vec::new(), Vec::new())
    };
    let mut log = CsvSink::create(log_path, RunLog::CSV_HEADER, &log_rows)?;
    let mut resets = if cfg.log_resets {
        Some(CsvSink::create(
            dir.join(RESETS_FILE),
            ResetEvent::CSV_HEADER,
            &reset_rows,
        )?)
    } else {
        None
    };

    if trainer.task == 0 && cfg.checkpoint_tasks.contains(&0) {
        let ckpt = checkpoint_of(&trainer, cfg);
        save_checkpoint(&ckpt, dir.join(checkpoint_name(ckpt.step)))?;
    }
    let mut sink_failure: Option<Failure> = None;
    let result = trainer.run(&stream, &schedule, &data, |t, outcome| {
        let mut after_task = || -> Result<()> {
            log.line(&RunLog::csv_row(&outcome.record))?;
            log.flush()?;
            if let Some(sink) = resets.as_mut() {
                for e in &outcome.resets {
                    sink.line(&e.csv_row())?;
                }
                sink.flush()?;
            }
            if !quiet {
                let r = &outcome.record;
                eprintln!(
                    "{} task {}/{} test_acc {:.4} train_acc {:.4} resets {}",
                    cfg.run_id,
                    r.task + 1,
                    cfg.tasks,
                    r.test_acc,
                    r.train_acc,
                    r.resets_total()
                );
            }
            let finished = t.task;
            if cfg.checkpoint_tasks.contains(&finished) {
                let ckpt = checkpoint_of(t, cfg);
                save_checkpoint(&ckpt, dir.join(checkpoint_name(ckpt.step)))?;
            }
            if cfg.checkpoint_every > 0
                && finished % cfg.checkpoint_every == 0
                && finished < cfg.tasks
            {
                save_checkpoint(&checkpoint_of(t, cfg), &resume_path)?;
            }
            Ok(())
        };
        after_task().map_err(|f| {
            let msg = f.to_string();
            sink_failure = Some(f);
            plasticity::Error::Config(msg)
        })
    });
    if let Err(e) = result {
        return Err(sink_failure.unwrap_or_else(|| e.into()));
    }
    if resume_path.exists() {
        fs::remove_file(&resume_path).map_err(|e| Failure::io(&resume_path, e))?;
    }
    let snapshot = trainer.cbp.tracker().snapshot_csv(trainer.cbp.steps());
    write_file(&dir.join(UTILITIES_FILE), snapshot.as_bytes())
}
