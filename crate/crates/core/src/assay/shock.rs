//! Clamping lesions and their output perturbation.

use crate::autodiff::{forward, hidden_layer, log_softmax, logits_from, ActivationTrace, Tensor};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShockMeasurement {
    pub layer: usize,
    pub unit: usize,
    /// Probe mean of `Σ_c |z_c - z'_c|`.
    pub logit_l1: f64,
    /// Probe mean of `KL(softmax(z) ‖ softmax(z'))`.
    pub kl: f64,
}

fn check_unit<S: Scalar>(net: &Network<S>, layer: usize, unit: usize) -> Result<()> {
    if layer >= net.hidden_count() || unit >= net.hidden_width(layer) {
        return Err(Error::Index { layer, unit });
    }
    Ok(())
}

/// Logits with hidden unit `(layer, unit)` overwritten by `r` for every example.
pub fn clamped_forward<S: Scalar>(
    net: &Network<S>,
    inputs: &Tensor<S>,
    layer: usize,
    unit: usize,
    r: S,
) -> Result<Tensor<S>> {
    check_unit(net, layer, unit)?;
    let mut x = inputs.clone();
    for l in 0..=layer {
        let mut pre = x.matmul(&net.layers[l].weight)?;
        pre.add_row_vector(&net.layers[l].bias);
        x = hidden_layer(net, l, pre).post;
    }
    for b in 0..x.rows() {
        *x.at_mut(b, unit) = r;
    }
    let next = &net.layers[layer + 1];
    let mut pre = x.matmul(&next.weight)?;
    pre.add_row_vector(&next.bias);
    logits_from(net, layer + 1, pre)
}

/// Same as [`clamped_forward`] but reuses a stored trace: only the next
/// preactivation changes, by the rank-one term `(r - h_i) w_out[i, :]`.
pub fn clamped_logits<S: Scalar>(
    trace: &ActivationTrace<S>,
    net: &Network<S>,
    layer: usize,
    unit: usize,
    r: S,
) -> Result<Tensor<S>> {
    check_unit(net, layer, unit)?;
    let mut pre = if layer + 1 < trace.depth() {
        trace.hidden[layer + 1].pre.clone()
    } else {
        trace.logits.clone()
    };
    let h = trace.post(layer);
    let w = net.layers[layer + 1].weight.row(unit);
    for b in 0..pre.rows() {
        let delta = r - h.at(b, unit);
        if delta == S::zero() {
            continue;
        }
        for (q, &wk) in pre.row_mut(b).iter_mut().zip(w) {
            *q += delta * wk;
        }
    }
    logits_from(net, layer + 1, pre)
}

/// Probe means of the logit-L1 distance and `KL(p ‖ q)` between two logit sets.
pub fn shock_between<S: Scalar>(original: &Tensor<S>, perturbed: &Tensor<S>) -> Result<(f64, f64)> {
    if original.shape() != perturbed.shape() || original.rows() == 0 {
        return Err(Error::shape(
            "shock logits",
            original.shape(),
            perturbed.shape(),
        ));
    }
    let (lp, lq) = (log_softmax(original), log_softmax(perturbed));
    let (mut l1, mut kl) = (0.0f64, 0.0f64);
    for b in 0..original.rows() {
        for c in 0..original.cols() {
            l1 += (original.at(b, c) - perturbed.at(b, c)).abs().as_f64();
            let (a, q) = (lp.at(b, c).as_f64(), lq.at(b, c).as_f64());
            kl += a.exp() * (a - q);
        }
    }
    let n = original.rows() as f64;
    // Rounding can leave a KL of exactly-equal distributions at -1e-17.
    Ok((l1 / n, (kl / n).max(0.0)))
}

pub fn measure_shock<S: Scalar>(
    net: &Network<S>,
    probe: &Tensor<S>,
    layer: usize,
    unit: usize,
    r: S,
) -> Result<ShockMeasurement> {
    if probe.rows() == 0 {
        return Err(Error::Config("probe set is empty".into()));
    }
    let trace = forward(net, probe)?;
    measure_shock_traced(&trace, net, layer, unit, r)
}

pub fn measure_shock_traced<S: Scalar>(
    trace: &ActivationTrace<S>,
    net: &Network<S>,
    layer: usize,
    unit: usize,
    r: S,
) -> Result<ShockMeasurement> {
    let clamped = clamped_logits(trace, net, layer, unit, r)?;
    let (logit_l1, kl) = shock_between(&trace.logits, &clamped)?;
    Ok(ShockMeasurement {
        layer,
        unit,
        logit_l1,
        kl,
    })
}

/// Number of units in the bottom `fraction` of a layer of `n`, at least one.
pub fn bottom_count(n: usize, fraction: f64) -> usize {
    // 0.05 * 20 evaluates to 1.0000000000000002; shave rounding noise before ceil.
    let k = (fraction * n as f64 - 1e-9).ceil().max(1.0) as usize;
    k.min(n)
}

/// Units of one layer ordered by ascending score, ties to the lower index.
pub fn ascending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

/// Per layer, the mean shock of the `⌈fraction · n⌉` lowest-scoring units;
/// then the mean over layers.
pub fn shock_at_k(scores: &[Vec<f64>], shocks: &[Vec<f64>], fraction: f64) -> Result<f64> {
    if scores.len() != shocks.len() || scores.is_empty() {
        return Err(Error::shape(
            "shock_at_k layers",
            &[scores.len()],
            &[shocks.len()],
        ));
    }
    let mut total = 0.0;
    for (s, m) in scores.iter().zip(shocks) {
        if s.len() != m.len() || s.is_empty() {
            return Err(Error::shape("shock_at_k units", &[s.len()], &[m.len()]));
        }
        let k = bottom_count(s.len(), fraction);
        let order = ascending_order(s);
        total += order[..k].iter().map(|&i| m[i]).sum::<f64>() / k as f64;
    }
    Ok(total / scores.len() as f64)
}
