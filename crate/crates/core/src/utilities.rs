//! Per-unit utility estimators and their online EMA tracking.
//!
//! Every hidden unit carries an age, a signed activation reference `f` and a
//! utility EMA `u`. The reference is bias-corrected into `r̂ = f / (1 - η^a)`,
//! the value a compensated reset effectively clamps the unit to. Utilities are
//! ranked by their bias-corrected value `u / (1 - β^a)`.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{hidden_gradients, ActivationTrace, Selector, Tensor};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::scalar::Scalar;

pub const DEFAULT_DECAY: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityKind {
    /// `E|h_i|`
    Activation,
    /// `E|h_i| · Σ_k |w_out|`
    Contribution,
    /// `E|h_i - r̂_i| · Σ_k |w_out| / Σ_j |w_in|`
    MCAdaptableContribution,
    /// `E|∂L/∂h_i|`
    LossGradient,
    /// `E|(h_i - r̂_i) ∂z_y/∂h_i|`
    GxdTarget,
    /// `E|h_i ∂z_y/∂h_i|`
    GxiTarget,
    /// `(1/C) Σ_c E|(h_i - r̂_i) ∂z_c/∂h_i|`
    GxdAllLogit,
}

impl UtilityKind {
    pub const ALL: [UtilityKind; 7] = [
        UtilityKind::Activation,
        UtilityKind::Contribution,
        UtilityKind::MCAdaptableContribution,
        UtilityKind::LossGradient,
        UtilityKind::GxdTarget,
        UtilityKind::GxiTarget,
        UtilityKind::GxdAllLogit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UtilityKind::Activation => "activation",
            UtilityKind::Contribution => "contribution",
            UtilityKind::MCAdaptableContribution => "mc-adaptable-contribution",
            UtilityKind::LossGradient => "loss-gradient",
            UtilityKind::GxdTarget => "gxd",
            UtilityKind::GxiTarget => "gxi",
            UtilityKind::GxdAllLogit => "gxd-all-logit",
        }
    }

    pub fn needs_loss_gradient(self) -> bool {
        self == UtilityKind::LossGradient
    }

    pub fn needs_target_gradient(self) -> bool {
        matches!(self, UtilityKind::GxdTarget | UtilityKind::GxiTarget)
    }

    pub fn needs_logit_gradients(self) -> bool {
        self == UtilityKind::GxdAllLogit
    }

    fn valid_names() -> String {
        Self::ALL
            .iter()
            .map(|k| k.name())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for UtilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UtilityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let kind = match key.as_str() {
            "activation" => UtilityKind::Activation,
            "contribution" => UtilityKind::Contribution,
            "mc-adaptable-contribution" | "mcac" | "mc-adapt" => {
                UtilityKind::MCAdaptableContribution
            }
            "loss-gradient" | "loss-grad" => UtilityKind::LossGradient,
            "gxd" | "gxd-target" => UtilityKind::GxdTarget,
            "gxi" | "gxi-target" => UtilityKind::GxiTarget,
            "gxd-all-logit" | "gxd-all" => UtilityKind::GxdAllLogit,
            _ => {
                return Err(Error::UnknownUtility {
                    name: s.to_string(),
                    valid: Self::valid_names(),
                })
            }
        };
        Ok(kind)
    }
}

#[inline]
fn correction<S: Scalar>(decay: S, age: u64) -> S {
    // decay^age underflows to 0 long before age leaves i32 range.
    S::one() - decay.powi(age.min(i32::MAX as u64) as i32)
}

/// `f' = (1 - η) h̄ + η f`
#[inline]
pub fn update_reference<S: Scalar>(f: S, batch_mean: S, eta: S) -> S {
    (S::one() - eta) * batch_mean + eta * f
}

/// Bias-corrected reference `f / (1 - η^a)`; 0 before any observation.
#[inline]
pub fn reference<S: Scalar>(f: S, age: u64, eta: S) -> S {
    if age == 0 {
        S::zero()
    } else {
        f / correction(eta, age)
    }
}

/// `u' = decay u + (1 - decay) û`
#[inline]
pub fn ewma_update<S: Scalar>(u: S, instant: S, decay: S) -> S {
    decay * u + (S::one() - decay) * instant
}

/// Bias-corrected utility `u / (1 - decay^a)`; 0 for a unit never observed.
#[inline]
pub fn rank_score<S: Scalar>(u: S, age: u64, decay: S) -> S {
    if age == 0 {
        S::zero()
    } else {
        u / correction(decay, age)
    }
}

/// Hidden-activation gradients a utility kind consumes for one batch.
#[derive(Debug, Clone, Default)]
pub struct UtilityGradients<S> {
    /// Gradients of the batch-mean cross-entropy.
    pub loss: Option<Vec<Tensor<S>>>,
    /// Gradients of each example's target logit.
    pub target: Option<Vec<Tensor<S>>>,
    /// `logits[c][l]`: gradients of logit `c`.
    pub logits: Option<Vec<Vec<Tensor<S>>>>,
}

impl<S: Scalar> UtilityGradients<S> {
    /// Runs whichever extra backward passes `kinds` require. `loss` may pass
    /// in hidden gradients already produced by the training step.
    pub fn compute(
        kinds: &[UtilityKind],
        trace: &ActivationTrace<S>,
        net: &Network<S>,
        labels: &[usize],
        loss: Option<Vec<Tensor<S>>>,
    ) -> Result<Self> {
        let mut out = UtilityGradients::default();
        if kinds.iter().any(|k| k.needs_loss_gradient()) {
            out.loss = match loss {
                Some(l) => Some(l),
                None => {
                    let seed = crate::autodiff::loss_seed(&trace.logits, labels)?;
                    Some(hidden_gradients(trace, net, Selector::Seed(&seed))?)
                }
            };
        }
        if kinds.iter().any(|k| k.needs_target_gradient()) {
            out.target = Some(hidden_gradients(trace, net, Selector::Targets(labels))?);
        }
        if kinds.iter().any(|k| k.needs_logit_gradients()) {
            let per_class = (0..net.classes())
                .map(|c| hidden_gradients(trace, net, Selector::Logit(c)))
                .collect::<Result<Vec<_>>>()?;
            out.logits = Some(per_class);
        }
        Ok(out)
    }
}

/// Batch-mean instantaneous utility `û` of every hidden unit.
///
/// `references[l][i]` is the bias-corrected reference `r̂` of unit `i` in
/// hidden layer `l`.
pub fn instant_utility<S: Scalar>(
    kind: UtilityKind,
    trace: &ActivationTrace<S>,
    net: &Network<S>,
    grads: &UtilityGradients<S>,
    references: &[Vec<S>],
) -> Result<Vec<Vec<S>>> {
    let missing = |what: &str| Error::Config(format!("utility `{kind}` requires {what} gradients"));
    let batch = trace.batch_size();
    let inv_b = S::one() / S::of(batch as f64);
    let mut out = Vec::with_capacity(trace.depth());
    for l in 0..trace.depth() {
        let h = trace.post(l);
        let width = h.cols();
        let r = &references[l];
        // Σ over rows of f(b, i), divided by the batch size.
        let batch_mean = |f: &dyn Fn(usize, usize) -> S| -> Vec<S> {
            let mut acc = vec![S::zero(); width];
            for b in 0..batch {
                for (i, a) in acc.iter_mut().enumerate() {
                    *a += f(b, i);
                }
            }
            acc.into_iter().map(|v| v * inv_b).collect()
        };
        let scores = match kind {
            UtilityKind::Activation => batch_mean(&|b, i| h.at(b, i).abs()),
            UtilityKind::Contribution => {
                let out_mass = outgoing_mass(net, l);
                let m = batch_mean(&|b, i| h.at(b, i).abs());
                m.into_iter().zip(out_mass).map(|(a, w)| a * w).collect()
            }
            UtilityKind::MCAdaptableContribution => {
                let out_mass = outgoing_mass(net, l);
                let in_mass = incoming_mass(net, l);
                let m = batch_mean(&|b, i| (h.at(b, i) - r[i]).abs());
                m.into_iter()
                    .zip(out_mass.into_iter().zip(in_mass))
                    // A unit whose incoming weights all vanish would divide by zero.
                    .map(|(d, (wo, wi))| d * wo / wi.max(S::epsilon()))
                    .collect()
            }
            UtilityKind::LossGradient => {
                let g = &grads.loss.as_ref().ok_or_else(|| missing("loss"))?[l];
                // Rows of the mean-loss gradient carry a 1/B factor; undo it to
                // average per-example loss gradients.
                let scale = S::of(batch as f64);
                batch_mean(&|b, i| (g.at(b, i) * scale).abs())
            }
            UtilityKind::GxdTarget => {
                let g = &grads
                    .target
                    .as_ref()
                    .ok_or_else(|| missing("target-logit"))?[l];
                batch_mean(&|b, i| ((h.at(b, i) - r[i]) * g.at(b, i)).abs())
            }
            UtilityKind::GxiTarget => {
                let g = &grads
                    .target
                    .as_ref()
                    .ok_or_else(|| missing("target-logit"))?[l];
                batch_mean(&|b, i| (h.at(b, i) * g.at(b, i)).abs())
            }
            UtilityKind::GxdAllLogit => {
                let per_class = grads.logits.as_ref().ok_or_else(|| missing("all-logit"))?;
                let classes = S::of(per_class.len() as f64);
                let mut total = vec![S::zero(); width];
                for class_grads in per_class {
                    let g = &class_grads[l];
                    let part = batch_mean(&|b, i| ((h.at(b, i) - r[i]) * g.at(b, i)).abs());
                    total.iter_mut().zip(part).for_each(|(t, p)| *t += p);
                }
                total.into_iter().map(|t| t / classes).collect()
            }
        };
        out.push(scores);
    }
    Ok(out)
}

/// `Σ_k |w_out[i, k]|` for each unit of hidden layer `l`.
pub fn outgoing_mass<S: Scalar>(net: &Network<S>, l: usize) -> Vec<S> {
    let w = &net.layers[l + 1].weight;
    (0..w.rows())
        .map(|i| w.row(i).iter().map(|v| v.abs()).sum())
        .collect()
}

/// `Σ_j |w_in[j, i]|` for each unit of hidden layer `l`.
pub fn incoming_mass<S: Scalar>(net: &Network<S>, l: usize) -> Vec<S> {
    let w = &net.layers[l].weight;
    let mut acc = vec![S::zero(); w.cols()];
    for j in 0..w.rows() {
        for (a, v) in acc.iter_mut().zip(w.row(j)) {
            *a += v.abs();
        }
    }
    acc
}

/// Online state of one hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTracker<S> {
    pub age: Vec<u64>,
    pub utility: Vec<S>,
    pub reference: Vec<S>,
    /// Fractional replacement counter `c_l`.
    pub counter: f64,
}

impl<S: Scalar> LayerTracker<S> {
    pub fn new(width: usize) -> Self {
        Self {
            age: vec![0; width],
            utility: vec![S::zero(); width],
            reference: vec![S::zero(); width],
            counter: 0.0,
        }
    }

    pub fn width(&self) -> usize {
        self.age.len()
    }
}

/// Ages, references and utility EMAs for every hidden unit of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitTracker<S> {
    pub kind: UtilityKind,
    pub decay: S,
    pub layers: Vec<LayerTracker<S>>,
}

impl<S: Scalar> UnitTracker<S> {
    pub fn new(kind: UtilityKind, net: &Network<S>, decay: S) -> Self {
        let layers = (0..net.hidden_count())
            .map(|l| LayerTracker::new(net.hidden_width(l)))
            .collect();
        Self {
            kind,
            decay,
            layers,
        }
    }

    pub fn references(&self) -> Vec<Vec<S>> {
        self.layers
            .iter()
            .map(|t| {
                t.reference
                    .iter()
                    .zip(&t.age)
                    .map(|(&f, &a)| reference(f, a, self.decay))
                    .collect()
            })
            .collect()
    }

    /// Bias-corrected reference `r̂` of one unit.
    pub fn reference_of(&self, layer: usize, unit: usize) -> S {
        let t = &self.layers[layer];
        reference(t.reference[unit], t.age[unit], self.decay)
    }

    pub fn rank_scores(&self, layer: usize) -> Vec<S> {
        let t = &self.layers[layer];
        t.utility
            .iter()
            .zip(&t.age)
            .map(|(&u, &a)| rank_score(u, a, self.decay))
            .collect()
    }

    /// Ages every unit by one update, folds the batch into the references,
    /// then folds the batch utility into the utility EMA.
    pub fn observe(
        &mut self,
        trace: &ActivationTrace<S>,
        net: &Network<S>,
        grads: &UtilityGradients<S>,
    ) -> Result<()> {
        if trace.depth() != self.layers.len() {
            return Err(Error::shape(
                "tracker depth",
                &[self.layers.len()],
                &[trace.depth()],
            ));
        }
        for (l, t) in self.layers.iter_mut().enumerate() {
            let means = trace.post(l).mean_rows();
            if means.len() != t.width() {
                return Err(Error::shape("tracker width", &[t.width()], &[means.len()]));
            }
            for ((a, f), m) in t.age.iter_mut().zip(t.reference.iter_mut()).zip(means) {
                *a += 1;
                *f = update_reference(*f, m, self.decay);
            }
        }
        let refs = self.references();
        let instant = instant_utility(self.kind, trace, net, grads, &refs)?;
        for (t, scores) in self.layers.iter_mut().zip(instant) {
            for (u, s) in t.utility.iter_mut().zip(scores) {
                *u = ewma_update(*u, s, self.decay);
            }
        }
        Ok(())
    }

    pub fn reset_unit(&mut self, layer: usize, unit: usize) {
        let t = &mut self.layers[layer];
        t.age[unit] = 0;
        t.utility[unit] = S::zero();
        t.reference[unit] = S::zero();
    }

    /// `step,layer,unit,age,rank_score` rows, with header.
    pub fn snapshot_csv(&self, step: u64) -> String {
        let mut out = String::from("step,layer,unit,age,rank_score\n");
        for (l, t) in self.layers.iter().enumerate() {
            for (i, score) in self.rank_scores(l).into_iter().enumerate() {
                let _ = writeln!(out, "{step},{l},{i},{},{}", t.age[i], score.as_f64());
            }
        }
        out
    }
}
