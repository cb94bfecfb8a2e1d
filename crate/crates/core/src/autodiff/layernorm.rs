//! Per-example layer normalization over the feature axis.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::scalar::Scalar;

pub const LAYERNORM_EPS: f64 = 1e-5;

/// Where normalization sits relative to the nonlinearity in a hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    /// `h = act(LN(q))`
    PreActivation,
    /// `h = LN(act(q))`
    PostActivation,
}

/// Values kept from the forward pass for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NormCache<S> {
    /// Normalized input before the affine transform.
    pub normalized: Tensor<S>,
    pub inv_std: Vec<S>,
}

/// Normalizes each row of `x` to zero mean and unit variance, then applies
/// `gain` and `shift` per feature.
pub fn layernorm<S: Scalar>(x: &Tensor<S>, gain: &[S], shift: &[S]) -> (Tensor<S>, NormCache<S>) {
    let (rows, cols) = (x.rows(), x.cols());
    let n = S::of(cols as f64);
    let eps = S::of(LAYERNORM_EPS);
    let mut normalized = Tensor::zeros(&[rows, cols]);
    let mut out = Tensor::zeros(&[rows, cols]);
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<S>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
        let inv = S::one() / (var + eps).sqrt();
        inv_std.push(inv);
        let nrow = normalized.row_mut(r);
        for (o, &v) in nrow.iter_mut().zip(row) {
            *o = (v - mean) * inv;
        }
        let nrow = normalized.row(r).to_vec();
        for (j, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = nrow[j] * gain[j] + shift[j];
        }
    }
    (
        out,
        NormCache {
            normalized,
            inv_std,
        },
    )
}

/// Gradients of a layernorm given the upstream gradient `dy`.
pub struct NormGrads<S> {
    pub input: Tensor<S>,
    pub gain: Vec<S>,
    pub shift: Vec<S>,
}

pub fn layernorm_backward<S: Scalar>(
    dy: &Tensor<S>,
    cache: &NormCache<S>,
    gain: &[S],
) -> NormGrads<S> {
    let (rows, cols) = (dy.rows(), dy.cols());
    let n = S::of(cols as f64);
    let mut dx = Tensor::zeros(&[rows, cols]);
    let mut dgain = vec![S::zero(); cols];
    let mut dshift = vec![S::zero(); cols];
    let mut dxhat = vec![S::zero(); cols];
    for r in 0..rows {
        let dyr = dy.row(r);
        let xh = cache.normalized.row(r);
        let mut sum_d = S::zero();
        let mut sum_dx = S::zero();
        for j in 0..cols {
            dgain[j] += dyr[j] * xh[j];
            dshift[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            sum_d += dxhat[j];
            sum_dx += dxhat[j] * xh[j];
        }
        let scale = cache.inv_std[r] / n;
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = scale * (n * dxhat[j] - sum_d - xh[j] * sum_dx);
        }
    }
    NormGrads {
        input: dx,
        gain: dgain,
        shift: dshift,
    }
}
