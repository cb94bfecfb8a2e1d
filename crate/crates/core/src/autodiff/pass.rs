//! Forward and reverse passes through a [`Network`].

use super::layernorm::{layernorm, layernorm_backward, NormCache, NormPlacement};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::model::{DenseLayer, Network, NormParams};
use crate::scalar::Scalar;

/// Intermediate values of one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTrace<S> {
    /// Preactivation `q = x W + b`.
    pub pre: Tensor<S>,
    pub norm: Option<NormCache<S>>,
    /// Input to the nonlinearity when it differs from `pre` (pre-activation norm).
    pub act_input: Option<Tensor<S>>,
    /// Output of the nonlinearity when it differs from `post` (post-activation norm).
    pub act_output: Option<Tensor<S>>,
    /// Post-activation `h`, consumed by the next layer.
    pub post: Tensor<S>,
}

/// Everything a forward pass retains for backward passes and utilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace<S> {
    pub input: Tensor<S>,
    pub hidden: Vec<HiddenTrace<S>>,
    pub logits: Tensor<S>,
}

impl<S: Scalar> ActivationTrace<S> {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    /// Post-activation of hidden layer `l`.
    pub fn post(&self, l: usize) -> &Tensor<S> {
        &self.hidden[l].post
    }
}

/// What scalar a gradient bundle differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradSource {
    /// Mean softmax cross-entropy over the batch.
    Loss,
    /// Per-example target logit `z_y`.
    TargetLogit,
    /// Logit `c` of every example.
    Logit(usize),
    /// Contraction of the logits with an explicit seed matrix.
    Seed,
}

/// Per-example scalar to backpropagate from.
#[derive(Debug, Clone, Copy)]
pub enum Selector<'a, S> {
    /// `z[b, targets[b]]` for each example `b`.
    Targets(&'a [usize]),
    /// `z[b, c]` for each example.
    Logit(usize),
    /// `Σ_c seed[b, c] z[b, c]`.
    Seed(&'a Tensor<S>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle<S> {
    /// Parameter gradients, shaped like `Network::layers`.
    pub params: Vec<DenseLayer<S>>,
    /// Gradients with respect to each hidden post-activation.
    pub hidden: Vec<Tensor<S>>,
    pub source: GradSource,
}

pub fn forward<S: Scalar>(net: &Network<S>, input: &Tensor<S>) -> Result<ActivationTrace<S>> {
    if input.shape().len() != 2 || input.cols() != net.input_width() {
        return Err(Error::shape(
            "forward input",
            &[
                input.shape().first().copied().unwrap_or(0),
                net.input_width(),
            ],
            input.shape(),
        ));
    }
    if !input.is_finite() {
        return Err(Error::NonFinite("forward input"));
    }
    // A non-finite weight always poisons its layer's output (`x * inf` and
    // `x * NaN` are never finite), so checking activations finds bad weights
    // without scanning every parameter.
    let bad_weights = || Error::NonFinite("network parameters");
    let mut hidden: Vec<HiddenTrace<S>> = Vec::with_capacity(net.hidden_count());
    for (l, layer) in net.layers[..net.hidden_count()].iter().enumerate() {
        let mut pre = {
            let x = if l == 0 { input } else { &hidden[l - 1].post };
            x.matmul(&layer.weight)?
        };
        pre.add_row_vector(&layer.bias);
        let norm_finite = layer
            .norm
            .as_ref()
            .is_none_or(|n| n.gain.iter().chain(&n.shift).all(|v| v.is_finite()));
        if !pre.is_finite() || !norm_finite {
            return Err(bad_weights());
        }
        let trace = hidden_layer(net, l, pre);
        if !trace.post.is_finite() {
            return Err(bad_weights());
        }
        hidden.push(trace);
    }
    let out = net.layers.last().unwrap();
    let last = if hidden.is_empty() {
        input
    } else {
        &hidden.last().unwrap().post
    };
    let mut logits = last.matmul(&out.weight)?;
    logits.add_row_vector(&out.bias);
    if !logits.is_finite() {
        return Err(bad_weights());
    }
    Ok(ActivationTrace {
        input: input.clone(),
        hidden,
        logits,
    })
}

/// Normalization and nonlinearity of hidden layer `l` applied to its
/// preactivation `pre = x W + b`.
pub fn hidden_layer<S: Scalar>(net: &Network<S>, l: usize, pre: Tensor<S>) -> HiddenTrace<S> {
    let act = net.activation();
    match (net.spec().layer_norm, &net.layers[l].norm) {
        (Some(NormPlacement::PreActivation), Some(np)) => {
            let (normed, cache) = layernorm(&pre, &np.gain, &np.shift);
            let post = normed.map(|v| act.value(v));
            HiddenTrace {
                pre,
                norm: Some(cache),
                act_input: Some(normed),
                act_output: None,
                post,
            }
        }
        (Some(NormPlacement::PostActivation), Some(np)) => {
            let activated = pre.map(|v| act.value(v));
            let (post, cache) = layernorm(&activated, &np.gain, &np.shift);
            HiddenTrace {
                pre,
                norm: Some(cache),
                act_input: None,
                act_output: Some(activated),
                post,
            }
        }
        _ => {
            let post = pre.map(|v| act.value(v));
            HiddenTrace {
                pre,
                norm: None,
                act_input: None,
                act_output: None,
                post,
            }
        }
    }
}

/// Logits from the preactivation of layer `l` onward (`l` may be the output
/// layer, in which case `pre` already is the logits).
pub fn logits_from<S: Scalar>(net: &Network<S>, l: usize, pre: Tensor<S>) -> Result<Tensor<S>> {
    let depth = net.hidden_count();
    if l > depth || pre.shape().len() != 2 || pre.cols() != net.layers[l].fan_out() {
        return Err(Error::shape(
            "logits_from preactivation",
            &[pre.rows(), net.layers[l.min(depth)].fan_out()],
            pre.shape(),
        ));
    }
    let mut pre = pre;
    for k in l..depth {
        let post = hidden_layer(net, k, pre).post;
        let next = &net.layers[k + 1];
        pre = post.matmul(&next.weight)?;
        pre.add_row_vector(&next.bias);
    }
    Ok(pre)
}

/// Row-wise softmax.
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::shape("labels", &[batch], &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Label {
            label: bad,
            classes,
        });
    }
    Ok(())
}

/// Mean softmax cross-entropy of a batch.
pub fn cross_entropy<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<S> {
    check_labels(labels, logits.rows(), logits.cols())?;
    let logp = log_softmax(logits);
    let total: S = labels
        .iter()
        .enumerate()
        .map(|(b, &y)| -logp.at(b, y))
        .sum();
    Ok(total / S::of(labels.len() as f64))
}

/// `∂L/∂z` for the mean cross-entropy: `(softmax(z) - onehot(y)) / B`.
pub fn loss_seed<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<Tensor<S>> {
    check_labels(labels, logits.rows(), logits.cols())?;
    let mut seed = softmax(logits);
    let inv_b = S::one() / S::of(labels.len() as f64);
    for (b, &y) in labels.iter().enumerate() {
        *seed.at_mut(b, y) -= S::one();
    }
    seed.data_mut().iter_mut().for_each(|v| *v *= inv_b);
    Ok(seed)
}

fn selector_seed<S: Scalar>(
    trace: &ActivationTrace<S>,
    selector: Selector<'_, S>,
) -> Result<(Tensor<S>, GradSource)> {
    let (batch, classes) = (trace.logits.rows(), trace.logits.cols());
    match selector {
        Selector::Targets(targets) => {
            if targets.len() != batch {
                return Err(Error::shape("selector targets", &[batch], &[targets.len()]));
            }
            let mut seed = Tensor::zeros(&[batch, classes]);
            for (b, &y) in targets.iter().enumerate() {
                if y >= classes {
                    return Err(Error::Selector { index: y, classes });
                }
                *seed.at_mut(b, y) = S::one();
            }
            Ok((seed, GradSource::TargetLogit))
        }
        Selector::Logit(c) => {
            if c >= classes {
                return Err(Error::Selector { index: c, classes });
            }
            let mut seed = Tensor::zeros(&[batch, classes]);
            for b in 0..batch {
                *seed.at_mut(b, c) = S::one();
            }
            Ok((seed, GradSource::Logit(c)))
        }
        Selector::Seed(seed) => {
            if seed.shape() != trace.logits.shape() {
                return Err(Error::shape(
                    "selector seed",
                    trace.logits.shape(),
                    seed.shape(),
                ));
            }
            Ok((seed.clone(), GradSource::Seed))
        }
    }
}

/// Gradients of the mean softmax cross-entropy.
pub fn backward_loss<S: Scalar>(
    trace: &ActivationTrace<S>,
    net: &Network<S>,
    labels: &[usize],
) -> Result<GradientBundle<S>> {
    let seed = loss_seed(&trace.logits, labels)?;
    let (params, hidden) = backprop(trace, net, &seed, true)?;
    Ok(GradientBundle {
        params: params.unwrap(),
        hidden,
        source: GradSource::Loss,
    })
}

/// Gradients of a selected per-example logit, summed over the batch.
///
/// Examples never interact in the forward pass, so row `b` of each hidden
/// gradient is exactly the gradient of example `b`'s own scalar.
pub fn backward_scalar<S: Scalar>(
    trace: &ActivationTrace<S>,
    net: &Network<S>,
    selector: Selector<'_, S>,
) -> Result<GradientBundle<S>> {
    let (seed, source) = selector_seed(trace, selector)?;
    let (params, hidden) = backprop(trace, net, &seed, true)?;
    Ok(GradientBundle {
        params: params.unwrap(),
        hidden,
        source,
    })
}

/// Hidden-activation gradients only; skips parameter gradients.
pub fn hidden_gradients<S: Scalar>(
    trace: &ActivationTrace<S>,
    net: &Network<S>,
    selector: Selector<'_, S>,
) -> Result<Vec<Tensor<S>>> {
    let (seed, _) = selector_seed(trace, selector)?;
    Ok(backprop(trace, net, &seed, false)?.1)
}

type Backprop<S> = (Option<Vec<DenseLayer<S>>>, Vec<Tensor<S>>);

fn backprop<S: Scalar>(
    trace: &ActivationTrace<S>,
    net: &Network<S>,
    seed: &Tensor<S>,
    with_params: bool,
) -> Result<Backprop<S>> {
    if trace.depth() != net.hidden_count() || trace.logits.cols() != net.classes() {
        return Err(Error::shape(
            "trace depth",
            &[net.hidden_count(), net.classes()],
            &[trace.depth(), trace.logits.cols()],
        ));
    }
    let act = net.activation();
    let depth = net.hidden_count();
    let mut params: Vec<Option<DenseLayer<S>>> = vec![None; depth + 1];
    let mut hidden: Vec<Tensor<S>> = Vec::with_capacity(depth);

    let out_layer = &net.layers[depth];
    let last_input = if depth == 0 {
        &trace.input
    } else {
        &trace.hidden[depth - 1].post
    };
    if with_params {
        params[depth] = Some(DenseLayer {
            weight: last_input.matmul_tn(seed)?,
            bias: seed.sum_rows(),
            norm: None,
        });
    }
    if depth == 0 {
        return Ok((
            with_params.then(|| params.into_iter().map(Option::unwrap).collect()),
            hidden,
        ));
    }
    let mut upstream = seed.matmul_nt(&out_layer.weight)?;

    for l in (0..depth).rev() {
        let layer = &net.layers[l];
        let ht = &trace.hidden[l];
        hidden.push(upstream.clone());
        let mut norm_grads = None;
        let dpre = match (&ht.norm, &layer.norm) {
            (Some(cache), Some(np)) if ht.act_input.is_some() => {
                let n = ht.act_input.as_ref().unwrap();
                let dn = zip_derivative(&upstream, n, |v| act.derivative(v));
                let g = layernorm_backward(&dn, cache, &np.gain);
                norm_grads = Some(NormParams {
                    gain: g.gain,
                    shift: g.shift,
                });
                g.input
            }
            (Some(cache), Some(np)) => {
                let g = layernorm_backward(&upstream, cache, &np.gain);
                norm_grads = Some(NormParams {
                    gain: g.gain,
                    shift: g.shift,
                });
                zip_derivative(&g.input, &ht.pre, |v| act.derivative(v))
            }
            _ => zip_derivative(&upstream, &ht.pre, |v| act.derivative(v)),
        };
        if with_params {
            let input = if l == 0 {
                &trace.input
            } else {
                &trace.hidden[l - 1].post
            };
            params[l] = Some(DenseLayer {
                weight: input.matmul_tn(&dpre)?,
                bias: dpre.sum_rows(),
                norm: norm_grads,
            });
        }
        if l > 0 {
            upstream = dpre.matmul_nt(&layer.weight)?;
        }
    }
    hidden.reverse();
    Ok((
        with_params.then(|| params.into_iter().map(Option::unwrap).collect()),
        hidden,
    ))
}

fn zip_derivative<S: Scalar>(
    upstream: &Tensor<S>,
    at: &Tensor<S>,
    d: impl Fn(S) -> S,
) -> Tensor<S> {
    let data = upstream
        .data()
        .iter()
        .zip(at.data())
        .map(|(&g, &x)| g * d(x))
        .collect();
    Tensor::from_vec(upstream.shape(), data).expect("shapes agree")
}

/// Index of the largest logit per row, ties to the lowest class index.
pub fn argmax_rows<S: Scalar>(logits: &Tensor<S>) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
