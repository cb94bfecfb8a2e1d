//! `report`: mean ± SE across seeds, as long-format CSV and optional SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use plasticity::stats;

use crate::assay as assay_cmd;
use crate::config::{RawConfig, SEED_KEYS};
use crate::fail::{Failure, Result};
use crate::train;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const FINAL_FILE: &str = "final.csv";
pub const SVG_FILE: &str = "summary.svg";
pub const SUMMARY_HEADER: &str = "series,x,metric,n,mean,se";
pub const FINAL_HEADER: &str = "series,metric,window,n,mean,se";

const TRAIN_METRICS: [&str; 3] = ["test_acc", "train_acc", "resets_total"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Train,
    Assay,
}

/// Run directories sharing one configuration up to seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub dirs: Vec<PathBuf>,
}

/// `name=dir1,dir2` names a series; bare directories form one unnamed series.
pub fn parse_series(args: &[String]) -> Result<Vec<Series>> {
    if args.is_empty() {
        return Err(Failure::usage("report needs at least one run directory"));
    }
    let mut out = Vec::new();
    let mut bare = Vec::new();
    for a in args {
        match a.split_once('=') {
            Some((name, dirs)) if !name.is_empty() && !name.contains(['/', ',']) => {
                let dirs: Vec<PathBuf> = dirs
                    .split(',')
                    .filter(|d| !d.is_empty())
                    .map(PathBuf::from)
                    .collect();
                if dirs.is_empty() {
                    return Err(Failure::usage(format!(
                        "series `{name}` lists no directories"
                    )));
                }
                out.push(Series {
                    name: name.to_string(),
                    dirs,
                });
            }
            _ => bare.push(PathBuf::from(a)),
        }
    }
    if !bare.is_empty() {
        out.push(Series {
            name: String::new(),
            dirs: bare,
        });
    }
    Ok(out)
}

fn kind_of(dir: &Path) -> Result<RunKind> {
    let train = dir.join(train::LOG_FILE).is_file();
    let assay = dir.join(assay_cmd::CSV_FILE).is_file();
    match (train, assay) {
        (true, false) => Ok(RunKind::Train),
        (false, true) => Ok(RunKind::Assay),
        (true, true) => Err(Failure::schema(format!(
            "{}: holds both a training log and an assay table",
            dir.display()
        ))),
        (false, false) => Err(Failure::new(
            "io",
            format!(
                "{}: no {} or {} found",
                dir.display(),
                train::LOG_FILE,
                assay_cmd::CSV_FILE
            ),
        )),
    }
}

struct Table {
    path: PathBuf,
    header: String,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Failure::schema(format!("{}: empty file", path.display())))?
        .to_string();
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<String> = line.split(',').map(str::to_owned).collect();
        if fields.len() != width {
            return Err(Failure::schema(format!(
                "{}: line {} has {} fields, header has {width}",
                path.display(),
                i + 2,
                fields.len()
            )));
        }
        rows.push(fields);
    }
    Ok(Table {
        path: path.to_path_buf(),
        header,
        rows,
    })
}

fn number(t: &Table, row: &[String], col: usize) -> Result<Option<f64>> {
    let v = &row[col];
    if v.is_empty() {
        return Ok(None);
    }
    v.parse()
        .map(Some)
        .map_err(|_| Failure::schema(format!("{}: `{v}` is not a number", t.path.display())))
}

fn column(t: &Table, name: &str) -> Result<usize> {
    t.header
        .split(',')
        .position(|h| h == name)
        .ok_or_else(|| Failure::schema(format!("{}: no `{name}` column", t.path.display())))
}

/// Config of a run with its seed-like keys removed.
fn comparable_config(dir: &Path, kind: RunKind) -> Result<RawConfig> {
    let (file, ignore): (&str, &[&str]) = match kind {
        RunKind::Train => (train::CONFIG_FILE, &SEED_KEYS),
        RunKind::Assay => (assay_cmd::CONFIG_FILE, &assay_cmd::SEED_KEYS),
    };
    let path = dir.join(file);
    let raw = RawConfig::load(&path)?;
    let mut kept = RawConfig::default();
    for k in raw.keys() {
        // The output root is plumbing, not part of the experiment.
        if !ignore.contains(&k.as_str()) && k != "out" {
            kept.set(k, raw.get(k).unwrap_or_default());
        }
    }
    Ok(kept)
}

fn describe_difference(a: &RawConfig, b: &RawConfig) -> String {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| a.get(k) != b.get(k))
        .map(|k| {
            format!(
                "{k} ({} vs {})",
                a.get(k).unwrap_or("-"),
                b.get(k).unwrap_or("-")
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `mean,se` cells; the SE cell is empty for a single value.
pub fn mean_se(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    (stats::mean(xs), stats::standard_error(xs))
}

/// One aggregated point of the long-format table.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub series: String,
    pub x: String,
    pub metric: String,
    pub values: Vec<f64>,
}

impl Point {
    fn csv_row(&self) -> String {
        let (m, se) = mean_se(&self.values);
        format!(
            "{},{},{},{},{},{}",
            self.series,
            self.x,
            self.metric,
            self.values.len(),
            fmt_opt(m),
            fmt_opt(se)
        )
    }
}

#[derive(Debug, Default)]
pub struct Report {
    pub kind: Option<RunKind>,
    pub points: Vec<Point>,
    pub finals: Vec<Point>,
}

impl Report {
    pub fn summary_csv(&self) -> String {
        let mut s = format!("{SUMMARY_HEADER}\n");
        for p in &self.points {
            s.push_str(&p.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn final_csv(&self) -> String {
        let mut s = format!("{FINAL_HEADER}\n");
        for p in &self.finals {
            let (m, se) = mean_se(&p.values);
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                p.series,
                p.metric,
                p.x,
                p.values.len(),
                fmt_opt(m),
                fmt_opt(se)
            );
        }
        s
    }
}

fn default_name(series: &Series, kind: RunKind) -> String {
    let first = &series.dirs[0];
    let base = first
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| first.display().to_string());
    let name = match kind {
        // relu-gxd-s3 -> relu-gxd
        RunKind::Train => match base.rsplit_once("-s") {
            Some((head, tail)) if !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()) => {
                head.to_string()
            }
            _ => base,
        },
        RunKind::Assay => base,
    };
    name.replace(',', "_")
}

/// Aggregates the given series; `window` is the final-task window for `final.csv`.
pub fn build(series: &[Series], window: usize) -> Result<Report> {
    let mut report = Report::default();
    let mut header: Option<(String, PathBuf)> = None;
    for s in series {
        let mut config: Option<(RawConfig, &Path)> = None;
        let mut tables = Vec::new();
        for dir in &s.dirs {
            let kind = kind_of(dir)?;
            match report.kind {
                None => report.kind = Some(kind),
                Some(k) if k != kind => {
                    return Err(Failure::schema(format!(
                        "{}: cannot mix training runs and assays in one report",
                        dir.display()
                    )))
                }
                _ => {}
            }
            let file = match kind {
                RunKind::Train => train::LOG_FILE,
                RunKind::Assay => assay_cmd::CSV_FILE,
            };
            let table = read_table(&dir.join(file))?;
            match &header {
                None => header = Some((table.header.clone(), table.path.clone())),
                Some((h, first)) if *h != table.header => {
                    return Err(Failure::schema(format!(
                        "{}: columns `{}` differ from `{h}` in {}",
                        table.path.display(),
                        table.header,
                        first.display()
                    )))
                }
                _ => {}
            }
            let cfg = comparable_config(dir, kind)?;
            match &config {
                None => config = Some((cfg, dir)),
                Some((c, first)) if *c != cfg => {
                    return Err(Failure::config(format!(
                        "{} and {} differ in non-seed settings: {}",
                        first.display(),
                        dir.display(),
                        describe_difference(c, &cfg)
                    )))
                }
                _ => {}
            }
            tables.push(table);
        }
        let kind = report.kind.expect("kind set by the first directory");
        let name = if s.name.is_empty() {
            default_name(s, kind)
        } else {
            s.name.clone()
        };
        match kind {
            RunKind::Train => aggregate_train(&name, &tables, window, &mut report)?,
            RunKind::Assay => aggregate_assay(&name, &tables, &mut report)?,
        }
    }
    Ok(report)
}

fn aggregate_train(name: &str, tables: &[Table], window: usize, report: &mut Report) -> Result<()> {
    let task_col = column(&tables[0], "task")?;
    for metric in TRAIN_METRICS {
        let col = column(&tables[0], metric)?;
        let mut by_task: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        let mut finals = Vec::new();
        for t in tables {
            let mut series = Vec::new();
            for row in &t.rows {
                let task: u64 = row[task_col].parse().map_err(|_| {
                    Failure::schema(format!(
                        "{}: bad task `{}`",
                        t.path.display(),
                        row[task_col]
                    ))
                })?;
                if let Some(v) = number(t, row, col)? {
                    by_task.entry(task).or_default().push(v);
                    series.push(v);
                }
            }
            if metric != "resets_total" && !series.is_empty() {
                let k = window.clamp(1, series.len());
                finals.push(series[series.len() - k..].iter().sum::<f64>() / k as f64);
            }
        }
        for (task, values) in by_task {
            report.points.push(Point {
                series: name.to_string(),
                x: task.to_string(),
                metric: metric.to_string(),
                values,
            });
        }
        if !finals.is_empty() {
            report.finals.push(Point {
                series: name.to_string(),
                x: window.to_string(),
                metric: metric.to_string(),
                values: finals,
            });
        }
    }
    Ok(())
}

fn aggregate_assay(name: &str, tables: &[Table], report: &mut Report) -> Result<()> {
    let t0 = &tables[0];
    let (u, m) = (column(t0, "utility")?, column(t0, "metric")?);
    let quantities = ["spearman", "shock_at_5", "oracle_shock_at_5"];
    let cols = quantities.map(|q| column(t0, q));
    let mut keys: Vec<(String, String)> = Vec::new();
    let mut values: BTreeMap<(String, String, usize), Vec<f64>> = BTreeMap::new();
    for t in tables {
        for row in &t.rows {
            let key = (row[u].clone(), row[m].clone());
            if !keys.contains(&key) {
                keys.push(key.clone());
            }
            for (qi, col) in cols.iter().enumerate() {
                let col = *col
                    .as_ref()
                    .map_err(|f| Failure::schema(f.message.clone()))?;
                if let Some(v) = number(t, row, col)? {
                    values
                        .entry((key.0.clone(), key.1.clone(), qi))
                        .or_default()
                        .push(v);
                }
            }
        }
    }
    for (utility, metric) in keys {
        for (qi, q) in quantities.iter().enumerate() {
            let v = values
                .remove(&(utility.clone(), metric.clone(), qi))
                .unwrap_or_default();
            report.points.push(Point {
                series: name.to_string(),
                x: utility.clone(),
                metric: format!("{q}:{metric}"),
                values: v,
            });
        }
    }
    Ok(())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Line chart of mean test accuracy per task, or bars of mean logit-L1 Spearman per utility.
pub fn svg(report: &Report) -> String {
    let (w, h, pad) = (720.0, 420.0, 50.0);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    );
    let mut names: Vec<&str> = Vec::new();
    for p in &report.points {
        if !names.contains(&p.series.as_str()) {
            names.push(&p.series);
        }
    }
    let (pw, ph) = (w - 2.0 * pad, h - 2.0 * pad);
    let _ = writeln!(
        s,
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/><line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>",
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    let mean = |p: &Point| stats::mean(&p.values);
    match report.kind {
        Some(RunKind::Train) => {
            let pts: Vec<&Point> = report
                .points
                .iter()
                .filter(|p| p.metric == "test_acc")
                .collect();
            let xmax = pts
                .iter()
                .filter_map(|p| p.x.parse::<f64>().ok())
                .fold(1.0f64, f64::max);
            let _ = writeln!(
                s,
                "<text x=\"{pad}\" y=\"{}\">mean test accuracy vs task</text>",
                pad - 15.0
            );
            for (i, name) in names.iter().enumerate() {
                let line: Vec<String> = pts
                    .iter()
                    .filter(|p| p.series == *name)
                    .filter_map(|p| {
                        let (x, y) = (p.x.parse::<f64>().ok()?, mean(p)?);
                        Some(format!(
                            "{:.2},{:.2}",
                            pad + pw * x / xmax,
                            h - pad - ph * y.clamp(0.0, 1.0)
                        ))
                    })
                    .collect();
                let color = PALETTE[i % PALETTE.len()];
                let _ = writeln!(
                    s,
                    "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>\n<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
                    line.join(" "),
                    w - pad - 150.0,
                    pad + 14.0 * (i as f64 + 1.0),
                    escape(name)
                );
            }
        }
        Some(RunKind::Assay) => {
            let pts: Vec<&Point> = report
                .points
                .iter()
                .filter(|p| p.metric == "spearman:logit-l1")
                .collect();
            let mut utilities: Vec<&str> = Vec::new();
            for p in &pts {
                if !utilities.contains(&p.x.as_str()) {
                    utilities.push(&p.x);
                }
            }
            let _ = writeln!(
                s,
                "<text x=\"{pad}\" y=\"{}\">mean Spearman (logit L1) per utility</text>",
                pad - 15.0
            );
            let slot = pw / utilities.len().max(1) as f64;
            let bar = slot * 0.8 / names.len().max(1) as f64;
            for (ui, utility) in utilities.iter().enumerate() {
                let x0 = pad + slot * ui as f64 + slot * 0.1;
                let _ = writeln!(
                    s,
                    "<text x=\"{:.2}\" y=\"{}\">{}</text>",
                    x0,
                    h - pad + 14.0,
                    escape(utility)
                );
                for (si, name) in names.iter().enumerate() {
                    let Some(v) = pts
                        .iter()
                        .find(|p| p.x == *utility && p.series == *name)
                        .and_then(|p| mean(p))
                    else {
                        continue;
                    };
                    let bh = ph * v.clamp(0.0, 1.0);
                    let _ = writeln!(
                        s,
                        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                        x0 + bar * si as f64,
                        h - pad - bh,
                        bar,
                        bh,
                        PALETTE[si % PALETTE.len()]
                    );
                }
            }
        }
        None => {}
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Writes `summary.csv`, `final.csv` (training runs) and optionally `summary.svg` into `out`.
pub fn run(series: &[Series], window: usize, out: &Path, with_svg: bool) -> Result<Report> {
    let report = build(series, window)?;
    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
    let write = |name: &str, text: &str| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Failure::io(&p, e))
    };
    write(SUMMARY_FILE, &report.summary_csv())?;
    if report.kind == Some(RunKind::Train) {
        write(FINAL_FILE, &report.final_csv())?;
    }
    if with_svg {
        write(SVG_FILE, &svg(&report))?;
    }
    Ok(report)
}
