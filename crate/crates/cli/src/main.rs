//! `plasticity`: train, assay and report front end.

mod assay;
mod config;
mod data;
mod fail;
mod report;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{RawConfig, RunConfig};
use fail::{Failure, Result};

#[derive(Parser)]
#[command(
    name = "plasticity",
    version,
    about = "Continual Backpropagation experiments on Permuted MNIST"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one online Permuted MNIST run.
    Train(Box<TrainArgs>),
    /// Reset-cost lesion assay over saved checkpoints.
    Assay(AssayArgs),
    /// Aggregate run or assay directories into mean ± SE tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct AssayArgs {
    /// Checkpoint files written by `train`.
    checkpoints: Vec<PathBuf>,
    /// Output directory for assay.csv, assay.json and the resolved config.
    #[arg(long, default_value = "assay")]
    out: PathBuf,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Seeds the calibration/probe split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2048)]
    calibration: usize,
    #[arg(long, default_value_t = 2048)]
    probe: usize,
    /// Bottom fraction of each layer for Shock@K.
    #[arg(long, default_value_t = 0.05)]
    fraction: f64,
    #[arg(long, default_value_t = 64)]
    warmup_batch: usize,
    #[arg(long, default_value_t = plasticity::utilities::DEFAULT_DECAY)]
    decay: f64,
    /// Comma-separated utility kinds, or `all`.
    #[arg(long, default_value = "all")]
    utilities: String,
    /// Comma-separated shock metrics (logit-l1, kl), or `all`.
    #[arg(long, default_value = "all")]
    metrics: String,
    /// Average per-layer Spearman values instead of pooling all units.
    #[arg(long)]
    per_layer: bool,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run or assay directories; `name=dir1,dir2` groups seeds into a named series.
    runs: Vec<String>,
    #[arg(long, default_value = "report")]
    out: PathBuf,
    /// Final-task window averaged into final.csv.
    #[arg(long, default_value_t = 20)]
    window: usize,
    /// Also draw summary.svg.
    #[arg(long)]
    svg: bool,
}

/// Every config key can also be given as a flag; flags override the file.
#[derive(Args, Default)]
struct TrainArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding the MNIST IDX files (default: $PLASTICITY_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Continue from the run directory's resume checkpoint if one exists.
    #[arg(long)]
    resume: bool,
    /// No per-task progress on stderr.
    #[arg(long, short)]
    quiet: bool,
    /// Extra `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    layer_norm: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    utility: Option<String>,
    #[arg(long)]
    replacement_rate: Option<String>,
    #[arg(long)]
    maturity: Option<String>,
    #[arg(long)]
    decay: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    tasks: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    perm_seed: Option<String>,
    #[arg(long)]
    checkpoint_tasks: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<String>,
    #[arg(long)]
    train_limit: Option<String>,
    #[arg(long)]
    test_limit: Option<String>,
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl TrainArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut raw = match &self.config {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        let mut flags = RawConfig::default();
        let named = [
            ("activation", &self.activation),
            ("layer_norm", &self.layer_norm),
            ("hidden", &self.hidden),
            ("init", &self.init),
            ("algorithm", &self.algorithm),
            ("utility", &self.utility),
            ("replacement_rate", &self.replacement_rate),
            ("maturity", &self.maturity),
            ("decay", &self.decay),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("batch_size", &self.batch_size),
            ("tasks", &self.tasks),
            ("seed", &self.seed),
            ("perm_seed", &self.perm_seed),
            ("checkpoint_tasks", &self.checkpoint_tasks),
            ("checkpoint_every", &self.checkpoint_every),
            ("train_limit", &self.train_limit),
            ("test_limit", &self.test_limit),
            ("precision", &self.precision),
            ("run_id", &self.run_id),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                flags.set(k, v.clone());
            }
        }
        if let Some(out) = &self.out {
            flags.set("out", out.display().to_string());
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            flags.set(k.trim(), v.trim());
        }
        raw.overlay(flags);
        RunConfig::resolve(&raw)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let data_dir = data::data_dir(args.data_dir.as_deref())?;
            let dir = train::run(&cfg, &data_dir, args.resume, args.quiet)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Assay(args) => {
            if args.checkpoints.is_empty() {
                return Err(Failure::usage("assay needs at least one checkpoint"));
            }
            let cfg = plasticity::assay::AssayConfig {
                calibration: args.calibration,
                probe: args.probe,
                fraction: args.fraction,
                warmup_batch: args.warmup_batch,
                decay: args.decay,
                kinds: assay::parse_kinds(&args.utilities)?,
                metrics: assay::parse_metrics(&args.metrics)?,
                per_layer: args.per_layer,
                seed: args.seed,
            };
            let data_dir = data::data_dir(args.data_dir.as_deref())?;
            assay::run(&cfg, &args.checkpoints, &data_dir, &args.out, args.quiet)?;
            println!("{}", args.out.display());
            Ok(())
        }
        Command::Report(args) => {
            let series = report::parse_series(&args.runs)?;
            report::run(&series, args.window, &args.out, args.svg)?;
            println!("{}", args.out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("{}", Failure::usage(first).line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
