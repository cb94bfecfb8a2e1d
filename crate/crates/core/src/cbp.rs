//! Continual Backpropagation: generate-and-test resets of mature,
//! low-utility hidden units at a fixed replacement rate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax_rows, backward_loss, cross_entropy, forward, sgd_step, Tensor};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::rng::{self, RngState, Stream};
use crate::scalar::Scalar;
use crate::utilities::{UnitTracker, UtilityGradients, UtilityKind, DEFAULT_DECAY};

/// How many resets a layer may perform in one step once its counter passes 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DrainMode {
    /// Reset while the counter exceeds 1.
    WhileAboveOne,
    /// At most one reset per layer per step.
    OncePerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetConfig {
    /// Expected resets per mature unit per step.
    pub replacement_rate: f64,
    /// Units become eligible once their age exceeds this many updates.
    pub maturity: u64,
    pub decay: f64,
    pub seed: u64,
    pub drain: DrainMode,
}

impl Default for ResetConfig {
    fn default() -> Self {
        Self {
            replacement_rate: 1e-4,
            maturity: 100,
            decay: DEFAULT_DECAY,
            seed: 0,
            drain: DrainMode::WhileAboveOne,
        }
    }
}

impl ResetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.replacement_rate >= 0.0 && self.replacement_rate.is_finite()) {
            return Err(Error::Config(format!(
                "replacement rate must be a finite value >= 0, got {}",
                self.replacement_rate
            )));
        }
        if self.maturity < 1 {
            return Err(Error::Config(
                "maturity threshold must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::Config(format!(
                "decay must lie in [0, 1), got {}",
                self.decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetEvent {
    pub step: u64,
    pub layer: usize,
    pub unit: usize,
    /// Bias-corrected utility at the time of the reset.
    pub score: f64,
    /// Reference the downstream biases were compensated with.
    pub reference: f64,
}

impl ResetEvent {
    pub const CSV_HEADER: &'static str = "step,layer,unit,score";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.step, self.layer, self.unit, self.score)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    pub loss: S,
    /// Examples whose pre-update prediction was correct.
    pub correct: usize,
    pub resets: Vec<ResetEvent>,
}

/// Lowest bias-corrected utility among units older than `maturity`; ties go
/// to the lowest index.
pub fn select_candidate<S: Scalar>(
    tracker: &UnitTracker<S>,
    layer: usize,
    maturity: u64,
) -> Option<usize> {
    let ages = &tracker.layers[layer].age;
    let scores = tracker.rank_scores(layer);
    let mut best: Option<usize> = None;
    for (i, (&age, &score)) in ages.iter().zip(&scores).enumerate() {
        if age <= maturity {
            continue;
        }
        match best {
            Some(b) if scores[b] <= score => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Replaces unit `unit` of hidden layer `layer` with a fresh one.
///
/// Incoming weights are redrawn from the init distribution and the unit's bias
/// (and layer-norm gain and shift, if any) return to their initial values. The unit's
/// outgoing contribution `w[unit, k] · reference` moves into the downstream
/// biases and its outgoing weights become zero, so for any input the next
/// layer's preactivation shifts by exactly `w[unit, k] (reference - h)`.
/// Momentum entries touching the unit and its tracker state are cleared.
pub fn reset_unit<S: Scalar, R: Rng + ?Sized>(
    net: &mut Network<S>,
    tracker: &mut UnitTracker<S>,
    layer: usize,
    unit: usize,
    reference: S,
    rng: &mut R,
) -> Result<()> {
    if layer >= net.hidden_count() || unit >= net.hidden_width(layer) {
        return Err(Error::Index { layer, unit });
    }
    let init = net.spec().init;
    let (fan_in, fan_out) = (net.layers[layer].fan_in(), net.layers[layer].fan_out());
    let incoming = &mut net.layers[layer].weight;
    for j in 0..fan_in {
        *incoming.at_mut(j, unit) = S::of(init.sample(rng, fan_in, fan_out));
    }
    net.layers[layer].bias[unit] = S::zero();
    if let Some(n) = &mut net.layers[layer].norm {
        n.gain[unit] = S::one();
        n.shift[unit] = S::zero();
    }

    let next = &mut net.layers[layer + 1];
    for k in 0..next.fan_out() {
        let w = next.weight.at(unit, k);
        next.bias[k] += w * reference;
    }
    next.weight
        .row_mut(unit)
        .iter_mut()
        .for_each(|w| *w = S::zero());

    let vel_in = &mut net.velocity[layer];
    for j in 0..fan_in {
        *vel_in.weight.at_mut(j, unit) = S::zero();
    }
    vel_in.bias[unit] = S::zero();
    if let Some(n) = &mut vel_in.norm {
        n.gain[unit] = S::zero();
        n.shift[unit] = S::zero();
    }
    net.velocity[layer + 1]
        .weight
        .row_mut(unit)
        .iter_mut()
        .for_each(|v| *v = S::zero());

    tracker.reset_unit(layer, unit);
    Ok(())
}

/// Training state of one CBP learner: utility tracker, reset stream and step count.
#[derive(Debug, Clone)]
pub struct ContinualBackprop<S> {
    config: ResetConfig,
    tracker: UnitTracker<S>,
    rng: ChaCha8Rng,
    step: u64,
}

impl<S: Scalar> ContinualBackprop<S> {
    pub fn new(net: &Network<S>, kind: UtilityKind, config: ResetConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            tracker: UnitTracker::new(kind, net, S::of(config.decay)),
            rng: rng::stream(config.seed, Stream::Reset),
            config,
            step: 0,
        })
    }

    /// Resumes from saved state.
    pub fn restore(
        config: ResetConfig,
        tracker: UnitTracker<S>,
        rng: &RngState,
        step: u64,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tracker,
            rng: rng.restore()?,
            step,
        })
    }

    pub fn config(&self) -> &ResetConfig {
        &self.config
    }

    pub fn tracker(&self) -> &UnitTracker<S> {
        &self.tracker
    }

    pub fn kind(&self) -> UtilityKind {
        self.tracker.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    /// One train step followed by utility tracking and resets.
    pub fn step(
        &mut self,
        net: &mut Network<S>,
        inputs: &Tensor<S>,
        labels: &[usize],
        lr: S,
        momentum: S,
    ) -> Result<StepOutcome<S>> {
        if inputs.rows() == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        let trace = forward(net, inputs)?;
        let loss = cross_entropy(&trace.logits, labels)?;
        let correct = argmax_rows(&trace.logits)
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        let grads = backward_loss(&trace, net, labels)?;
        let kind = self.tracker.kind;
        let loss_hidden = kind.needs_loss_gradient().then_some(grads.hidden);
        let util_grads = UtilityGradients::compute(&[kind], &trace, net, labels, loss_hidden)?;
        self.tracker.observe(&trace, net, &util_grads)?;
        drop(trace);

        sgd_step(net, &grads.params, lr, momentum)?;
        self.step += 1;

        let resets = self.replace(net)?;
        Ok(StepOutcome {
            loss,
            correct,
            resets,
        })
    }

    fn replace(&mut self, net: &mut Network<S>) -> Result<Vec<ResetEvent>> {
        let mut events = Vec::new();
        let rate = self.config.replacement_rate;
        if rate == 0.0 {
            return Ok(events);
        }
        let maturity = self.config.maturity;
        for l in 0..self.tracker.layers.len() {
            let eligible = self.tracker.layers[l]
                .age
                .iter()
                .filter(|&&a| a > maturity)
                .count();
            self.tracker.layers[l].counter += eligible as f64 * rate;
            while self.tracker.layers[l].counter > 1.0 {
                let Some(unit) = select_candidate(&self.tracker, l, maturity) else {
                    break;
                };
                let score = self.tracker.rank_scores(l)[unit];
                let reference = self.tracker.reference_of(l, unit);
                reset_unit(net, &mut self.tracker, l, unit, reference, &mut self.rng)?;
                self.tracker.layers[l].counter -= 1.0;
                events.push(ResetEvent {
                    step: self.step,
                    layer: l,
                    unit,
                    score: score.as_f64(),
                    reference: reference.as_f64(),
                });
                if self.config.drain == DrainMode::OncePerStep {
                    break;
                }
            }
        }
        Ok(events)
    }
}
