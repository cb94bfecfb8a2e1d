//! Flat `key = value` run configuration.
//!
//! Values are layered defaults < config file < command-line flags, then
//! resolved into a [`RunConfig`]. The resolved form is written next to every
//! run so that it alone reproduces the run given the same data files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plasticity::autodiff::{Activation, NormPlacement};
use plasticity::cbp::{DrainMode, ResetConfig};
use plasticity::model::{InitScheme, NetworkSpec};
use plasticity::utilities::UtilityKind;

use crate::fail::{Failure, Result};

pub const MNIST_INPUT: usize = 784;
pub const MNIST_CLASSES: usize = 10;

/// Raw key/value layers before resolution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Failure::config(format!(
                    "{}:{}: expected `key = value`, got `{line}`",
                    origin.display(),
                    n + 1
                )));
            };
            values.insert(k.trim().replace('-', "_"), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.replace('-', "_"), value.into());
    }

    /// `other` wins on conflicts.
    pub fn overlay(&mut self, other: RawConfig) {
        self.values.extend(other.values);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.values.keys()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Cbp,
    Backprop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

/// Fully resolved `train` configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub activation: Activation,
    pub layer_norm: Option<NormPlacement>,
    pub hidden: Vec<usize>,
    pub init: InitScheme,
    pub algorithm: Algorithm,
    pub utility: UtilityKind,
    pub replacement_rate: f64,
    pub maturity: u64,
    pub decay: f64,
    pub drain: DrainMode,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub tasks: usize,
    pub seed: u64,
    pub perm_seed: u64,
    /// Completed-task counts at which to keep a checkpoint.
    pub checkpoint_tasks: Vec<usize>,
    /// Also checkpoint every this many tasks, for resumption (0 = never).
    pub checkpoint_every: usize,
    /// Use only the first N training / test examples (0 = all).
    pub train_limit: usize,
    pub test_limit: usize,
    pub precision: Precision,
    pub wall_time: bool,
    pub log_resets: bool,
    pub run_id: String,
    pub out: PathBuf,
}

/// Keys that may differ between runs aggregated by `report`.
pub const SEED_KEYS: [&str; 3] = ["seed", "perm_seed", "run_id"];

pub const KNOWN_KEYS: [&str; 25] = [
    "activation",
    "layer_norm",
    "hidden",
    "init",
    "algorithm",
    "utility",
    "replacement_rate",
    "maturity",
    "decay",
    "drain",
    "lr",
    "momentum",
    "batch_size",
    "tasks",
    "seed",
    "perm_seed",
    "checkpoint_tasks",
    "checkpoint_every",
    "train_limit",
    "test_limit",
    "precision",
    "wall_time",
    "log_resets",
    "run_id",
    "out",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Failure::config(format!("`{key}`: cannot parse `{v}`: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Failure::config(format!(
            "`{key}`: expected true or false, got `{v}`"
        ))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let v = v.trim();
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

/// `256x4` or `256,256,256,256`.
fn parse_hidden(v: &str) -> Result<Vec<usize>> {
    if let Some((w, n)) = v.split_once('x') {
        let w: usize = parse_num("hidden", w.trim())?;
        let n: usize = parse_num("hidden", n.trim())?;
        return Ok(vec![w; n]);
    }
    parse_list("hidden", v)
}

fn list_text<T: ToString>(xs: &[T]) -> String {
    if xs.is_empty() {
        "none".into()
    } else {
        xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
    }
}

fn norm_text(n: Option<NormPlacement>) -> &'static str {
    match n {
        None => "none",
        Some(NormPlacement::PreActivation) => "pre",
        Some(NormPlacement::PostActivation) => "post",
    }
}

impl RunConfig {
    pub fn resolve(raw: &RawConfig) -> Result<Self> {
        if let Some(bad) = raw.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Failure::config(format!(
                "unknown key `{bad}` (valid keys: {})",
                KNOWN_KEYS.join(", ")
            )));
        }
        let get = |k: &str| raw.get(k);
        let lib = |e: plasticity::Error| Failure::config(e.to_string());

        let activation: Activation = get("activation").unwrap_or("relu").parse().map_err(lib)?;
        let layer_norm = match get("layer_norm").unwrap_or("none") {
            "none" | "false" | "off" => None,
            "pre" | "true" | "on" => Some(NormPlacement::PreActivation),
            "post" => Some(NormPlacement::PostActivation),
            other => {
                return Err(Failure::config(format!(
                    "`layer_norm`: expected none, pre or post, got `{other}`"
                )))
            }
        };
        let algorithm = match get("algorithm").unwrap_or("cbp") {
            "cbp" => Algorithm::Cbp,
            "backprop" | "bp" => Algorithm::Backprop,
            other => {
                return Err(Failure::config(format!(
                    "`algorithm`: expected cbp or backprop, got `{other}`"
                )))
            }
        };
        let default_utility = match algorithm {
            Algorithm::Cbp => "gxd",
            // Tracked but never acted on; the cheapest kind.
            Algorithm::Backprop => "activation",
        };
        let utility: UtilityKind = get("utility")
            .unwrap_or(default_utility)
            .parse()
            .map_err(lib)?;
        let replacement_rate = match (get("replacement_rate"), algorithm) {
            (Some(v), _) => parse_num("replacement_rate", v)?,
            (None, Algorithm::Backprop) => 0.0,
            (None, Algorithm::Cbp) => match activation {
                Activation::Silu | Activation::LeakyRelu { .. } => 1e-3,
                _ => 1e-4,
            },
        };
        let lr = match (get("lr"), algorithm) {
            (Some(v), _) => parse_num("lr", v)?,
            (None, Algorithm::Backprop) => 0.1,
            (None, Algorithm::Cbp) => 0.3,
        };
        let seed: u64 = parse_num("seed", get("seed").unwrap_or("0"))?;
        let precision = match get("precision").unwrap_or("f64") {
            "f64" | "64" => Precision::F64,
            "f32" | "32" => Precision::F32,
            other => {
                return Err(Failure::config(format!(
                    "`precision`: expected f64 or f32, got `{other}`"
                )))
            }
        };
        let drain = match get("drain").unwrap_or("while") {
            "while" => DrainMode::WhileAboveOne,
            "once" => DrainMode::OncePerStep,
            other => {
                return Err(Failure::config(format!(
                    "`drain`: expected while or once, got `{other}`"
                )))
            }
        };
        let mut cfg = RunConfig {
            activation,
            layer_norm,
            hidden: parse_hidden(get("hidden").unwrap_or("256x4"))?,
            init: get("init")
                .unwrap_or("glorot-uniform")
                .parse()
                .map_err(lib)?,
            algorithm,
            utility,
            replacement_rate,
            maturity: parse_num("maturity", get("maturity").unwrap_or("100"))?,
            decay: parse_num("decay", get("decay").unwrap_or("0.99"))?,
            drain,
            lr,
            momentum: parse_num("momentum", get("momentum").unwrap_or("0"))?,
            batch_size: parse_num("batch_size", get("batch_size").unwrap_or("16"))?,
            tasks: parse_num("tasks", get("tasks").unwrap_or("200"))?,
            seed,
            perm_seed: match get("perm_seed") {
                Some(v) => parse_num("perm_seed", v)?,
                None => seed,
            },
            checkpoint_tasks: parse_list(
                "checkpoint_tasks",
                get("checkpoint_tasks").unwrap_or(""),
            )?,
            checkpoint_every: parse_num(
                "checkpoint_every",
                get("checkpoint_every").unwrap_or("0"),
            )?,
            train_limit: parse_num("train_limit", get("train_limit").unwrap_or("0"))?,
            test_limit: parse_num("test_limit", get("test_limit").unwrap_or("0"))?,
            precision,
            wall_time: parse_bool("wall_time", get("wall_time").unwrap_or("false"))?,
            log_resets: parse_bool("log_resets", get("log_resets").unwrap_or("true"))?,
            run_id: String::new(),
            out: PathBuf::from(get("out").unwrap_or("runs")),
        };
        cfg.run_id = match get("run_id") {
            Some(id) => id.to_string(),
            None => cfg.default_run_id(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn default_run_id(&self) -> String {
        let act = self.activation.name();
        let ln = if self.layer_norm.is_some() { "-ln" } else { "" };
        let method = match self.algorithm {
            Algorithm::Backprop => "backprop".to_string(),
            Algorithm::Cbp => self.utility.name().to_string(),
        };
        format!("{act}{ln}-{method}-s{}", self.seed)
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Failure::config("`batch_size` must be at least 1"));
        }
        if self.tasks == 0 {
            return Err(Failure::config("`tasks` must be at least 1"));
        }
        if self.run_id.is_empty()
            || self.run_id.contains(['/', '\\'])
            || self.run_id.starts_with('.')
        {
            return Err(Failure::config(format!(
                "`run_id` `{}` is not a plain directory name",
                self.run_id
            )));
        }
        if let Some(&t) = self.checkpoint_tasks.iter().find(|&&t| t > self.tasks) {
            return Err(Failure::config(format!(
                "checkpoint task {t} exceeds `tasks` = {}",
                self.tasks
            )));
        }
        self.reset_config()
            .validate()
            .map_err(|e| Failure::config(e.to_string()))?;
        self.network_spec()
            .validate()
            .map_err(|e| Failure::config(e.to_string()))?;
        Ok(())
    }

    pub fn network_spec(&self) -> NetworkSpec {
        let mut widths = vec![MNIST_INPUT];
        widths.extend(&self.hidden);
        widths.push(MNIST_CLASSES);
        NetworkSpec {
            widths,
            activation: self.activation,
            layer_norm: self.layer_norm,
            init: self.init,
            seed: self.seed,
        }
    }

    pub fn reset_config(&self) -> ResetConfig {
        ResetConfig {
            replacement_rate: self.replacement_rate,
            maturity: self.maturity,
            decay: self.decay,
            seed: self.seed,
            drain: self.drain,
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(&self.run_id)
    }

    /// Resolved `key = value` text, one key per line in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("activation", self.activation.to_string());
        kv("layer_norm", norm_text(self.layer_norm).into());
        kv("hidden", list_text(&self.hidden));
        kv("init", self.init.to_string());
        kv(
            "algorithm",
            match self.algorithm {
                Algorithm::Cbp => "cbp",
                Algorithm::Backprop => "backprop",
            }
            .into(),
        );
        kv("utility", self.utility.to_string());
        kv("replacement_rate", self.replacement_rate.to_string());
        kv("maturity", self.maturity.to_string());
        kv("decay", self.decay.to_string());
        kv(
            "drain",
            match self.drain {
                DrainMode::WhileAboveOne => "while",
                DrainMode::OncePerStep => "once",
            }
            .into(),
        );
        kv("lr", self.lr.to_string());
        kv("momentum", self.momentum.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("tasks", self.tasks.to_string());
        kv("seed", self.seed.to_string());
        kv("perm_seed", self.perm_seed.to_string());
        kv("checkpoint_tasks", list_text(&self.checkpoint_tasks));
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("train_limit", self.train_limit.to_string());
        kv("test_limit", self.test_limit.to_string());
        kv(
            "precision",
            match self.precision {
                Precision::F64 => "f64",
                Precision::F32 => "f32",
            }
            .into(),
        );
        kv("wall_time", self.wall_time.to_string());
        kv("log_resets", self.log_resets.to_string());
        kv("run_id", self.run_id.clone());
        kv("out", self.out.display().to_string());
        s
    }
}
