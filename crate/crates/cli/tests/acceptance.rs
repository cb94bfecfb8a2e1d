//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 5 (property suites) and 6 (determinism) always run. The
//! MNIST-scale criteria 1-4 run only when `--ignored` is passed, and need
//! the real IDX files in `$PLASTICITY_DATA_DIR`:
//!
//! ```text
//! cargo test --release -p plasticity-cli --test acceptance -- --ignored [assay|pmnist]
//! ```
//!
//! Training runs are cached under `target/acceptance` and resumed or skipped
//! when already complete.

mod common;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use plasticity::assay::{
    ranking_correlation, run_assay, shock_at_k, AssayConfig, AssayInput, AssayReport, ShockMetric,
};
use plasticity::autodiff::{
    backward_loss, backward_scalar, cross_entropy, forward, sgd_step, Activation, NormPlacement,
    Selector, Tensor,
};
use plasticity::benchmarks::load_mnist;
use plasticity::cbp::{reset_unit, ContinualBackprop, ResetConfig};
use plasticity::model::{load_checkpoint, InitScheme, Network, NetworkSpec};
use plasticity::rng::{stream, Stream};
use plasticity::stats::spearman;
use plasticity::utilities::{
    instant_utility, reference, update_reference, UnitTracker, UtilityGradients, UtilityKind,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use common::{checkpoints, plasticity, write_mnist, SMALL};

struct Verdict {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Verdict {
    fn new(summary: impl Into<String>) -> Self {
        Self {
            pass: true,
            summary: summary.into(),
            details: Vec::new(),
        }
    }

    /// Records one sub-check; any failure fails the criterion.
    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.details
            .push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, line: String) {
        self.details.push(format!("     {line}"));
    }

    fn fail(&mut self, line: String) {
        self.check(false, line);
    }

    fn print(&self, id: &str) -> bool {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id}: {}", self.summary);
        for d in &self.details {
            println!("         {d}");
        }
        self.pass
    }
}

fn workspace_target() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../target/acceptance")
        .components()
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    stream(seed, Stream::Shuffle)
}

fn random_batch(
    r: &mut ChaCha8Rng,
    rows: usize,
    width: usize,
    classes: usize,
) -> (Tensor<f64>, Vec<usize>) {
    let x = (0..rows * width)
        .map(|_| r.random_range(0.0..1.0))
        .collect();
    let y = (0..rows).map(|_| r.random_range(0..classes)).collect();
    (Tensor::from_vec(&[rows, width], x).unwrap(), y)
}

fn net(widths: &[usize], act: Activation, norm: Option<NormPlacement>, seed: u64) -> Network<f64> {
    let mut spec = NetworkSpec::mlp(widths, act, InitScheme::GlorotUniform, seed);
    if let Some(p) = norm {
        spec = spec.with_layer_norm(p);
    }
    let mut n = Network::build(&spec).unwrap();
    let mut r = stream(seed + 1000, Stream::Init);
    for layer in &mut n.layers {
        layer
            .bias
            .iter_mut()
            .for_each(|b| *b = r.random_range(-0.3..0.3));
        if let Some(np) = layer.norm.as_mut() {
            np.gain
                .iter_mut()
                .for_each(|g| *g = r.random_range(0.5..1.5));
            np.shift
                .iter_mut()
                .for_each(|s| *s = r.random_range(-0.3..0.3));
        }
    }
    n
}

const ACTS: [Activation; 5] = [
    Activation::Identity,
    Activation::Relu,
    Activation::LeakyRelu { slope: 0.01 },
    Activation::Silu,
    Activation::Tanh,
];

// ---------------------------------------------------------------------------
// Criterion 5

/// Worst relative error of loss gradients against central differences (h = 1e-6).
///
/// The relative bound applies where it is resolvable: a central difference
/// carries round-off of about `4 eps |L| / h`, so gradients smaller than that
/// over 1e-5 are instead held to the round-off itself. Returns the worst
/// relative error, how many gradients it covers, and how many small ones
/// miss the round-off bound.
fn fd_gradients() -> (f64, usize, usize) {
    const H: f64 = 1e-6;
    const TOL: f64 = 1e-5;
    let (mut worst, mut resolvable, mut misses) = (0.0f64, 0, 0);
    let norms = [
        None,
        Some(NormPlacement::PreActivation),
        Some(NormPlacement::PostActivation),
    ];
    for act in ACTS {
        for norm in norms {
            let n = net(&[5, 8, 8, 3], act, norm, 3);
            let (x, y) = random_batch(&mut rng(4), 4, 5, 3);
            for target in [false, true] {
                let loss = |m: &Network<f64>| {
                    let z = forward(m, &x).unwrap().logits;
                    if target {
                        y.iter().enumerate().map(|(b, &c)| z.at(b, c)).sum()
                    } else {
                        cross_entropy(&z, &y).unwrap()
                    }
                };
                let trace = forward(&n, &x).unwrap();
                let grads = if target {
                    backward_scalar(&trace, &n, Selector::Targets(&y)).unwrap()
                } else {
                    backward_loss(&trace, &n, &y).unwrap()
                };
                let noise = 4.0 * f64::EPSILON * loss(&n).abs().max(1.0) / H;
                for l in 0..n.layers.len() {
                    for a in 0..n.layers[l].arrays().len() {
                        for i in 0..n.layers[l].arrays()[a].len() {
                            let nudged = |d: f64| {
                                let mut m = n.clone();
                                m.layers[l].arrays_mut()[a][i] += d;
                                loss(&m)
                            };
                            let fd = (nudged(H) - nudged(-H)) / (2.0 * H);
                            let an = grads.params[l].arrays()[a][i];
                            let gap = (an - fd).abs();
                            let size = an.abs().max(fd.abs());
                            if size >= noise / TOL {
                                resolvable += 1;
                                worst = worst.max(gap / size);
                            } else if gap > noise {
                                misses += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    (worst, resolvable, misses)
}

/// Largest |per-example GXD - exact clamp-induced |Δz_y|| on identity networks.
fn linear_gxd_gap() -> f64 {
    let n = net(&[6, 9, 7, 4], Activation::Identity, None, 5);
    let mut r = rng(6);
    let refs: Vec<Vec<f64>> = (0..2)
        .map(|l| {
            (0..n.hidden_width(l))
                .map(|_| r.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let mut worst = 0.0f64;
    for _ in 0..8 {
        let (x, y) = random_batch(&mut r, 1, 6, 4);
        let trace = forward(&n, &x).unwrap();
        let kinds = [UtilityKind::GxdTarget];
        let grads = UtilityGradients::compute(&kinds, &trace, &n, &y, None).unwrap();
        let gxd = instant_utility(UtilityKind::GxdTarget, &trace, &n, &grads, &refs).unwrap();
        for l in 0..2 {
            for i in 0..n.hidden_width(l) {
                let z = plasticity::assay::clamped_forward(&n, &x, l, i, refs[l][i]).unwrap();
                let exact = (z.at(0, y[0]) - trace.logits.at(0, y[0])).abs();
                worst = worst.max((gxd[l][i] - exact).abs());
            }
        }
    }
    worst
}

fn gxi_gxd_gap() -> f64 {
    let mut worst = 0.0f64;
    for (s, act) in ACTS.into_iter().enumerate() {
        let n = net(&[5, 9, 9, 4], act, None, 20 + s as u64);
        let mut r = rng(40 + s as u64);
        let (x, y) = random_batch(&mut r, 6, 5, 4);
        let trace = forward(&n, &x).unwrap();
        let kinds = [UtilityKind::GxdTarget, UtilityKind::GxiTarget];
        let grads = UtilityGradients::compute(&kinds, &trace, &n, &y, None).unwrap();
        let refs: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..9).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let gxi = instant_utility(UtilityKind::GxiTarget, &trace, &n, &grads, &refs).unwrap();
        let gxd = instant_utility(
            UtilityKind::GxdTarget,
            &trace,
            &n,
            &grads,
            &vec![vec![0.0; 9]; 2],
        )
        .unwrap();
        for (a, b) in gxi.iter().flatten().zip(gxd.iter().flatten()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Largest |q'_k - q_k + w_rk (h_r - r̂)| over resets of every unit.
fn compensation_gap() -> f64 {
    let mut worst = 0.0f64;
    for (s, act) in ACTS.into_iter().enumerate() {
        let base = net(&[5, 7, 6, 3], act, None, 60 + s as u64);
        let mut r = rng(70 + s as u64);
        let (x, _) = random_batch(&mut r, 5, 5, 3);
        let before = forward(&base, &x).unwrap();
        for l in 0..2 {
            for unit in 0..base.hidden_width(l) {
                let mut n = base.clone();
                let mut tracker = UnitTracker::new(UtilityKind::Activation, &n, 0.99);
                let rhat = r.random_range(-1.0..1.0);
                let w: Vec<f64> = n.layers[l + 1].weight.row(unit).to_vec();
                reset_unit(
                    &mut n,
                    &mut tracker,
                    l,
                    unit,
                    rhat,
                    &mut stream(s as u64, Stream::Reset),
                )
                .unwrap();
                let after = forward(&n, &x).unwrap();
                let (q0, q1) = if l + 1 < 2 {
                    (&before.hidden[l + 1].pre, &after.hidden[l + 1].pre)
                } else {
                    (&before.logits, &after.logits)
                };
                let h = before.post(l);
                for b in 0..x.rows() {
                    for (k, wk) in w.iter().enumerate() {
                        let expected = -wk * (h.at(b, unit) - rhat);
                        worst = worst.max((q1.at(b, k) - q0.at(b, k) - expected).abs());
                    }
                }
            }
        }
    }
    worst
}

/// Largest relative deviation of the bias-corrected reference of a constant stream.
fn constant_stream_gap() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(80);
    for eta in [0.0, 0.5, 0.9, 0.99, 0.999] {
        for _ in 0..20 {
            let c: f64 = r.random_range(-50.0..50.0);
            let mut f = 0.0;
            for age in 1..=2000u64 {
                f = update_reference(f, c, eta);
                worst = worst.max((reference(f, age, eta) - c).abs() / c.abs().max(1e-300));
            }
        }
    }
    worst
}

/// Number of (utility kind) trajectories where ρ = 0 CBP differs from plain SGD.
fn zero_rate_mismatches() -> usize {
    let spec = NetworkSpec::mlp(
        &[6, 12, 12, 4],
        Activation::Silu,
        InitScheme::KaimingUniform,
        9,
    )
    .with_layer_norm(NormPlacement::PostActivation);
    UtilityKind::ALL
        .iter()
        .filter(|&&kind| {
            let mut a = Network::<f64>::build(&spec).unwrap();
            let mut b = a.clone();
            let config = ResetConfig {
                replacement_rate: 0.0,
                maturity: 1,
                ..ResetConfig::default()
            };
            let mut cbp = ContinualBackprop::new(&a, kind, config).unwrap();
            let mut r = rng(10);
            for _ in 0..100 {
                let (x, y) = random_batch(&mut r, 5, 6, 4);
                cbp.step(&mut a, &x, &y, 0.1, 0.9).unwrap();
                let g = backward_loss(&forward(&b, &x).unwrap(), &b, &y).unwrap();
                sgd_step(&mut b, &g.params, 0.1, 0.9).unwrap();
            }
            a != b
        })
        .count()
}

/// Spearman by counting ranks and the textbook Pearson formula.
fn spearman_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&a| {
                let less = v.iter().filter(|&&b| b < a).count() as f64;
                let equal = v.iter().filter(|&&b| b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn spearman_gap() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(90);
    for _ in 0..200 {
        // Coarse grids force ties.
        let x: Vec<f64> = (0..50).map(|_| r.random_range(0..15) as f64).collect();
        let y: Vec<f64> = (0..50)
            .map(|_| r.random_range(-1e3..1e3f64).round() / 10.0)
            .collect();
        match (spearman(&x, &y), spearman_oracle(&x, &y)) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            _ => return f64::INFINITY,
        }
    }
    worst
}

/// Shock@K by sorting (score, index) pairs and averaging the first ⌈p n / 100⌉ shocks.
fn shock_at_k_gap() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(91);
    for _ in 0..200 {
        let layers = r.random_range(1..4);
        let scores: Vec<Vec<f64>> = (0..layers)
            .map(|_| (0..50).map(|_| r.random_range(0..20) as f64).collect())
            .collect();
        let shocks: Vec<Vec<f64>> = (0..layers)
            .map(|_| (0..50).map(|_| r.random_range(0.0..5.0)).collect())
            .collect();
        let p: usize = r.random_range(1..50);
        let k = (p * 50).div_ceil(100);
        let mut total = 0.0;
        for (s, m) in scores.iter().zip(&shocks) {
            let mut pairs: Vec<(f64, usize)> = s.iter().copied().zip(0..).collect();
            pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            total += pairs[..k].iter().map(|&(_, i)| m[i]).sum::<f64>() / k as f64;
        }
        let oracle = total / layers as f64;
        let got = shock_at_k(&scores, &shocks, p as f64 / 100.0).unwrap();
        worst = worst.max((got - oracle).abs());
    }
    worst
}

fn criterion5() -> Verdict {
    let mut v = Verdict::new("property suites");
    let (fd, resolvable, misses) = fd_gradients();
    v.check(
        fd <= 1e-5 && misses == 0,
        format!(
            "finite-difference gradients (loss and target logit): worst rel err {fd:.2e} <= 1e-5 \
             over {resolvable} resolvable entries, {misses} smaller ones outside f64 round-off"
        ),
    );
    let lin = linear_gxd_gap();
    v.check(
        lin <= 1e-9,
        format!("linear-network GXD exactness: max gap {lin:.2e} <= 1e-9"),
    );
    let gxi = gxi_gxd_gap();
    v.check(
        gxi <= 1e-12,
        format!("GXI == GXD with zero reference: max gap {gxi:.2e} <= 1e-12"),
    );
    let comp = compensation_gap();
    v.check(
        comp <= 1e-12,
        format!("bias-compensation identity: max gap {comp:.2e} <= 1e-12"),
    );
    let ema = constant_stream_gap();
    v.check(
        ema <= 1e-12,
        format!("constant-stream reference: max rel gap {ema:.2e} (ages 1..2000)"),
    );
    let sgd = zero_rate_mismatches();
    v.check(
        sgd == 0,
        format!("rho = 0 vs plain SGD over 100 steps: {sgd}/7 utilities differ bitwise"),
    );
    let sp = spearman_gap();
    v.check(
        sp <= 1e-12,
        format!("Spearman vs counting oracle, 50 units: max gap {sp:.2e}"),
    );
    let sk = shock_at_k_gap();
    v.check(
        sk <= 1e-12,
        format!("Shock@K vs sort oracle, 50 units: max gap {sk:.2e}"),
    );
    v
}

// ---------------------------------------------------------------------------
// Criterion 6

fn criterion6() -> Verdict {
    let mut v = Verdict::new("train and assay reruns are bitwise identical");
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_mnist(&data, 200, 300);
    let train = |out: &Path| -> Option<PathBuf> {
        let mut args = vec![
            "train",
            "-q",
            "--tasks",
            "3",
            "--checkpoint-tasks",
            "3",
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(&SMALL);
        let o = plasticity(&args, Some(&data));
        o.status
            .success()
            .then(|| PathBuf::from(String::from_utf8_lossy(&o.stdout).trim()))
    };
    let (Some(a), Some(b)) = (train(&tmp.path().join("a")), train(&tmp.path().join("b"))) else {
        v.fail("train failed".into());
        return v;
    };
    for f in ["log.csv", "resets.csv", "utilities.csv"] {
        let same = fs::read(a.join(f)).ok() == fs::read(b.join(f)).ok();
        v.check(same, format!("train {f}"));
    }
    let ckpt = checkpoints(&a).pop().unwrap();
    let assay = |out: &str| {
        let out = tmp.path().join(out);
        let o = plasticity(
            &[
                "assay",
                "-q",
                "--calibration",
                "128",
                "--probe",
                "128",
                "--out",
                out.to_str().unwrap(),
                ckpt.to_str().unwrap(),
            ],
            Some(&data),
        );
        o.status.success().then_some(out)
    };
    let (Some(x), Some(y)) = (assay("x"), assay("y")) else {
        v.fail("assay failed".into());
        return v;
    };
    for f in ["assay.csv", "assay.json"] {
        let same = fs::read(x.join(f)).ok() == fs::read(y.join(f)).ok();
        v.check(same, format!("assay {f}"));
    }
    v
}

// ---------------------------------------------------------------------------
// Criteria 1-3

fn data_dir() -> Result<PathBuf, String> {
    match std::env::var_os("PLASTICITY_DATA_DIR") {
        Some(d) if Path::new(&d).join("t10k-images-idx3-ubyte").is_file() => Ok(PathBuf::from(d)),
        _ => Err("PLASTICITY_DATA_DIR must point at the MNIST IDX files".into()),
    }
}

/// Trains (or reuses) the three 30-task checkpoint runs for `act`.
fn assay_runs(act: &str, data: &Path) -> Result<Vec<PathBuf>, String> {
    let out = workspace_target().join("assay-runs");
    let mut ckpts = Vec::new();
    for seed in 0..3 {
        let seed = seed.to_string();
        let o = plasticity(
            &[
                "train",
                "-q",
                "--resume",
                "--activation",
                act,
                "--algorithm",
                "backprop",
                "--lr",
                "0.01",
                "--batch-size",
                "64",
                "--init",
                "kaiming-uniform",
                "--tasks",
                "30",
                "--checkpoint-tasks",
                "0,5,10,20,30",
                "--checkpoint-every",
                "5",
                "--seed",
                &seed,
                "--out",
                out.to_str().unwrap(),
            ],
            Some(data),
        );
        if !o.status.success() {
            return Err(format!(
                "{act} seed {seed}: {}",
                String::from_utf8_lossy(&o.stderr).trim()
            ));
        }
        let dir = PathBuf::from(String::from_utf8_lossy(&o.stdout).trim());
        ckpts.extend(checkpoints(&dir));
    }
    Ok(ckpts)
}

struct AssayResult {
    report: AssayReport,
    /// Mean over checkpoints of per-layer averaged ρ (logit L1), by utility name.
    per_layer: BTreeMap<&'static str, f64>,
}

impl AssayResult {
    fn rho(&self, kind: UtilityKind) -> f64 {
        self.report
            .overall(kind.name(), ShockMetric::LogitL1)
            .and_then(|e| e.spearman.mean)
            .unwrap_or(f64::NAN)
    }

    fn shock5(&self, name: &str) -> f64 {
        self.report
            .overall(name, ShockMetric::LogitL1)
            .and_then(|e| e.shock_at_5.mean)
            .unwrap_or(f64::NAN)
    }

    fn oracle5(&self) -> f64 {
        self.report
            .overall(UtilityKind::GxdTarget.name(), ShockMetric::LogitL1)
            .and_then(|e| e.oracle_shock_at_5.mean)
            .unwrap_or(f64::NAN)
    }

    fn line(&self, kind: UtilityKind) -> String {
        let e = self
            .report
            .overall(kind.name(), ShockMetric::LogitL1)
            .unwrap();
        format!(
            "{:<26} rho {:.3} ± {:.3} (per-layer {:.3})  shock@5 {:.4}",
            kind.name(),
            e.spearman.mean.unwrap_or(f64::NAN),
            e.spearman.se.unwrap_or(f64::NAN),
            self.per_layer[kind.name()],
            e.shock_at_5.mean.unwrap_or(f64::NAN)
        )
    }
}

fn assay_activation(act: &str) -> Result<AssayResult, String> {
    let data = data_dir()?;
    let ckpts = assay_runs(act, &data)?;
    if ckpts.len() != 15 {
        return Err(format!(
            "{act}: expected 15 checkpoints, found {}",
            ckpts.len()
        ));
    }
    let test = load_mnist::<f64>(
        data.join("t10k-images-idx3-ubyte"),
        data.join("t10k-labels-idx1-ubyte"),
    )
    .map_err(|e| e.to_string())?;
    let inputs = ckpts
        .iter()
        .map(|p| {
            let ckpt = load_checkpoint::<f64>(p).map_err(|e| e.to_string())?;
            let label = format!(
                "{}/{}",
                p.parent().unwrap().file_name().unwrap().to_string_lossy(),
                p.file_stem().unwrap().to_string_lossy()
            );
            AssayInput::from_checkpoint(label, ckpt).map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let config = AssayConfig::default();
    let report = run_assay(&inputs, &test, &config).map_err(|e| e.to_string())?;
    let dir = workspace_target().join("assay").join(act);
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    fs::write(dir.join("assay.csv"), report.to_csv()).map_err(|e| e.to_string())?;
    let mut per_layer = BTreeMap::new();
    for kind in UtilityKind::ALL {
        let rhos: Vec<f64> = report
            .checkpoints
            .iter()
            .filter_map(|c| {
                let scores = c.scores_of(&config.kinds, kind)?;
                ranking_correlation(scores, &c.shock_values(ShockMetric::LogitL1), true)
            })
            .collect();
        per_layer.insert(kind.name(), rhos.iter().sum::<f64>() / rhos.len() as f64);
    }
    Ok(AssayResult { report, per_layer })
}

fn criteria_1_to_3() -> Vec<(String, Verdict)> {
    use UtilityKind as K;
    let relu = assay_activation("relu");
    let silu = assay_activation("silu");

    let mut c1 = Verdict::new("ReLU assay rankings (Spearman vs logit-L1 shock, 15 checkpoints)");
    let mut c2 = Verdict::new("SiLU assay rankings (Spearman vs logit-L1 shock, 15 checkpoints)");
    let mut c3 = Verdict::new("Shock@5% ordering (logit L1)");
    match &relu {
        Ok(r) => {
            let (g, m, lg) = (
                r.rho(K::GxdTarget),
                r.rho(K::MCAdaptableContribution),
                r.rho(K::LossGradient),
            );
            c1.check(g >= 0.98, format!("gxd rho {g:.3} >= 0.98"));
            c1.check(
                (0.90..=1.0).contains(&m),
                format!("mc-adaptable-contribution rho {m:.3} in [0.90, 1]"),
            );
            c1.check(lg <= 0.85, format!("loss-gradient rho {lg:.3} <= 0.85"));
            for k in K::ALL {
                c1.note(r.line(k));
            }
        }
        Err(e) => c1.fail(e.clone()),
    }
    match &silu {
        Ok(s) => {
            let (g, a, gi) = (
                s.rho(K::GxdTarget),
                s.rho(K::Activation),
                s.rho(K::GxiTarget),
            );
            c2.check(g >= 0.95, format!("gxd rho {g:.3} >= 0.95"));
            c2.check(a <= 0.40, format!("activation rho {a:.3} <= 0.40"));
            c2.check(gi <= 0.70, format!("gxi rho {gi:.3} <= 0.70"));
            for k in K::ALL {
                c2.note(s.line(k));
            }
        }
        Err(e) => c2.fail(e.clone()),
    }
    for (name, res) in [("relu", &relu), ("silu", &silu)] {
        let Ok(r) = res else {
            c3.fail(format!("{name}: assay unavailable"));
            continue;
        };
        let gxd = r.shock5(K::GxdTarget.name());
        let (best, best_v) = K::ALL
            .iter()
            .map(|k| (k.name(), r.shock5(k.name())))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        c3.check(
            best == K::GxdTarget.name(),
            format!("{name}: gxd shock@5 {gxd:.4} is the minimum (lowest: {best} {best_v:.4})"),
        );
        if name == "relu" {
            let oracle = r.oracle5();
            c3.check(
                gxd <= 2.0 * oracle,
                format!("relu: gxd shock@5 {gxd:.4} <= 2 x oracle {oracle:.4}"),
            );
        }
    }
    vec![("1".into(), c1), ("2".into(), c2), ("3".into(), c3)]
}

// ---------------------------------------------------------------------------
// Criterion 4

struct PmnistRun {
    label: &'static str,
    flags: &'static [&'static str],
}

const PMNIST_RUNS: [PmnistRun; 10] = [
    PmnistRun {
        label: "leaky-relu gxd",
        flags: &["--activation", "leaky-relu", "--utility", "gxd"],
    },
    PmnistRun {
        label: "leaky-relu contribution",
        flags: &["--activation", "leaky-relu", "--utility", "contribution"],
    },
    PmnistRun {
        label: "leaky-relu mc-adaptable-contribution",
        flags: &[
            "--activation",
            "leaky-relu",
            "--utility",
            "mc-adaptable-contribution",
        ],
    },
    PmnistRun {
        label: "relu gxd",
        flags: &["--activation", "relu", "--utility", "gxd"],
    },
    PmnistRun {
        label: "relu contribution",
        flags: &["--activation", "relu", "--utility", "contribution"],
    },
    PmnistRun {
        label: "relu+ln backprop",
        flags: &[
            "--activation",
            "relu",
            "--layer-norm",
            "pre",
            "--algorithm",
            "backprop",
        ],
    },
    PmnistRun {
        label: "relu+ln gxd",
        flags: &[
            "--activation",
            "relu",
            "--layer-norm",
            "pre",
            "--utility",
            "gxd",
        ],
    },
    PmnistRun {
        label: "relu+ln contribution",
        flags: &[
            "--activation",
            "relu",
            "--layer-norm",
            "pre",
            "--utility",
            "contribution",
        ],
    },
    PmnistRun {
        label: "relu+ln mc-adaptable-contribution",
        flags: &[
            "--activation",
            "relu",
            "--layer-norm",
            "pre",
            "--utility",
            "mc-adaptable-contribution",
        ],
    },
    PmnistRun {
        label: "relu+ln loss-gradient",
        flags: &[
            "--activation",
            "relu",
            "--layer-norm",
            "pre",
            "--utility",
            "loss-gradient",
        ],
    },
];

const PMNIST_TASKS: usize = 200;
const FINAL_WINDOW: usize = 20;
/// Score of a run whose parameters became non-finite: its logits carry no information.
const CHANCE: f64 = 0.1;

/// Final-window mean test accuracy of one run, or why it has none.
fn pmnist_run(run: &PmnistRun, seed: u64, data: &Path) -> Result<f64, String> {
    let out = workspace_target().join("pmnist");
    let seed = seed.to_string();
    let mut args = vec![
        "train",
        "--tasks",
        "200",
        "--precision",
        "f32",
        "--checkpoint-every",
        "10",
        "--resume",
        "-q",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        &seed,
    ];
    args.extend_from_slice(run.flags);
    let o = plasticity(&args, Some(data));
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).trim().to_string());
    }
    let dir = PathBuf::from(String::from_utf8_lossy(&o.stdout).trim());
    let log = fs::read_to_string(dir.join("log.csv")).map_err(|e| e.to_string())?;
    let acc: Vec<f64> = log
        .lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.parse().ok())
                .unwrap_or(f64::NAN)
        })
        .collect();
    if acc.len() != PMNIST_TASKS {
        return Err(format!("{} tasks logged", acc.len()));
    }
    Ok(acc[PMNIST_TASKS - FINAL_WINDOW..].iter().sum::<f64>() / FINAL_WINDOW as f64)
}

fn criterion4() -> Verdict {
    let mut v = Verdict::new("Permuted MNIST, 200 tasks x 3 seeds, final-20-task test accuracy");
    let data = match data_dir() {
        Ok(d) => d,
        Err(e) => {
            v.fail(e);
            return v;
        }
    };
    let mut acc: BTreeMap<&str, f64> = BTreeMap::new();
    for run in &PMNIST_RUNS {
        let mut per_seed = Vec::new();
        let mut text = String::new();
        for seed in 0..3 {
            match pmnist_run(run, seed, &data) {
                Ok(a) => {
                    let _ = write!(text, " s{seed} {:.2}", 100.0 * a);
                    per_seed.push(a);
                }
                Err(e) if e.contains("non-finite") => {
                    let _ = write!(text, " s{seed} diverged");
                    per_seed.push(CHANCE);
                }
                Err(e) => {
                    v.fail(format!("{} seed {seed}: {e}", run.label));
                    return v;
                }
            }
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        v.note(format!(
            "{:<36} {:.2}  ({})",
            run.label,
            100.0 * mean,
            text.trim()
        ));
        acc.insert(run.label, mean);
    }
    let pts = |k: &str| 100.0 * acc[k];
    let g = pts("leaky-relu gxd");
    for base in [
        "leaky-relu contribution",
        "leaky-relu mc-adaptable-contribution",
    ] {
        let b = pts(base);
        v.check(
            g >= b + 2.0,
            format!("(a) leaky-relu gxd {g:.2} >= {base} {b:.2} + 2"),
        );
    }
    let (g, c) = (pts("relu gxd"), pts("relu contribution"));
    v.check(
        (g - c).abs() <= 0.5,
        format!("(b) relu |gxd {g:.2} - contribution {c:.2}| <= 0.5"),
    );
    let (g, bp) = (pts("relu+ln gxd"), pts("relu+ln backprop"));
    v.check(
        g >= bp + 2.0,
        format!("(c) relu+ln gxd {g:.2} >= backprop {bp:.2} + 2"),
    );
    for base in [
        "relu+ln contribution",
        "relu+ln mc-adaptable-contribution",
        "relu+ln loss-gradient",
    ] {
        let b = pts(base);
        v.check(
            (b - bp).abs() <= 1.0,
            format!("(c) {base} {b:.2} within 1 of backprop {bp:.2}"),
        );
    }
    v
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let heavy = args
        .iter()
        .any(|a| a == "--ignored" || a == "--include-ignored");
    let only: Vec<&str> = args
        .iter()
        .map(String::as_str)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let wants = |name: &str| only.is_empty() || only.contains(&name);

    let mut ok = true;
    if !heavy || only.is_empty() || wants("properties") {
        ok &= criterion5().print("5");
        ok &= criterion6().print("6");
    }
    if heavy {
        if wants("assay") {
            for (id, v) in criteria_1_to_3() {
                ok &= v.print(&id);
            }
        }
        if wants("pmnist") {
            ok &= criterion4().print("4");
        }
    } else {
        println!("[SKIP] criteria 1-4: MNIST-scale; run with `-- --ignored` in release mode");
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
