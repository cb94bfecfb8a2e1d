//! Network construction and initialization.

pub mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, NormPlacement, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

/// Weight initialization distribution `d_l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    GlorotUniform,
    KaimingUniform,
    KaimingNormal,
}

impl InitScheme {
    /// Draws one weight for a layer with the given fan-in and fan-out.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::GlorotUniform => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Uniform::new_inclusive(-bound, bound).unwrap().sample(rng)
            }
            InitScheme::KaimingUniform => {
                let bound = (6.0 / fan_in as f64).sqrt();
                Uniform::new_inclusive(-bound, bound).unwrap().sample(rng)
            }
            InitScheme::KaimingNormal => {
                let std = (2.0 / fan_in as f64).sqrt();
                Normal::new(0.0, std).unwrap().sample(rng)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InitScheme::GlorotUniform => "glorot-uniform",
            InitScheme::KaimingUniform => "kaiming-uniform",
            InitScheme::KaimingNormal => "kaiming-normal",
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "glorot-uniform" | "xavier-uniform" | "glorot" => Ok(InitScheme::GlorotUniform),
            "kaiming-uniform" | "he-uniform" => Ok(InitScheme::KaimingUniform),
            "kaiming-normal" | "he-normal" => Ok(InitScheme::KaimingNormal),
            _ => Err(Error::Config(format!(
                "unsupported init scheme `{s}` (valid: glorot-uniform, kaiming-uniform, kaiming-normal)"
            ))),
        }
    }
}

/// Architecture and initialization of a fully connected network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub layer_norm: Option<NormPlacement>,
    pub init: InitScheme,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn mlp(widths: &[usize], activation: Activation, init: InitScheme, seed: u64) -> Self {
        Self {
            widths: widths.to_vec(),
            activation,
            layer_norm: None,
            init,
            seed,
        }
    }

    pub fn with_layer_norm(mut self, placement: NormPlacement) -> Self {
        self.layer_norm = Some(placement);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::Config(
                "a network needs an input width, at least one hidden layer and an output width"
                    .into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("layer widths must be at least 1".into()));
        }
        if self.layer_norm.is_some() && self.widths[1..self.widths.len() - 1].iter().any(|&w| w < 2)
        {
            return Err(Error::Config(
                "layer normalization needs hidden widths of at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<S> {
    pub gain: Vec<S>,
    pub shift: Vec<S>,
}

/// One affine layer. `weight[i][k]` connects input unit `i` to output unit `k`.
///
/// The same container holds parameters, gradients and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<S> {
    pub weight: Tensor<S>,
    pub bias: Vec<S>,
    pub norm: Option<NormParams<S>>,
}

impl<S: Scalar> DenseLayer<S> {
    pub fn zeros_like(other: &DenseLayer<S>) -> Self {
        Self {
            weight: Tensor::zeros(other.weight.shape()),
            bias: vec![S::zero(); other.bias.len()],
            norm: other.norm.as_ref().map(|n| NormParams {
                gain: vec![S::zero(); n.gain.len()],
                shift: vec![S::zero(); n.shift.len()],
            }),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    /// All parameter slices in declaration order.
    pub fn arrays(&self) -> Vec<&[S]> {
        let mut out = vec![self.weight.data(), &self.bias[..]];
        if let Some(n) = &self.norm {
            out.push(&n.gain);
            out.push(&n.shift);
        }
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [S]> {
        let mut out = vec![self.weight.data_mut(), &mut self.bias[..]];
        if let Some(n) = &mut self.norm {
            out.push(&mut n.gain);
            out.push(&mut n.shift);
        }
        out
    }

    fn same_shape(&self, other: &DenseLayer<S>) -> bool {
        self.weight.shape() == other.weight.shape()
            && self.bias.len() == other.bias.len()
            && self.norm.as_ref().map(|n| n.gain.len()) == other.norm.as_ref().map(|n| n.gain.len())
    }
}

/// A fully connected network with its SGD momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    spec: NetworkSpec,
    /// Hidden layers followed by the output layer.
    pub layers: Vec<DenseLayer<S>>,
    /// Momentum buffers, shaped like `layers`.
    pub velocity: Vec<DenseLayer<S>>,
}

impl<S: Scalar> Network<S> {
    /// Samples weights from the `NetworkSpec` init scheme under its seed; biases
    /// start at 0 and layer-norm gains at 1.
    pub fn build(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(spec.seed, Stream::Init);
        let depth = spec.widths.len() - 1;
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let data = (0..fan_in * fan_out)
                .map(|_| S::of(spec.init.sample(&mut rng, fan_in, fan_out)))
                .collect();
            let hidden = l + 1 < depth;
            layers.push(DenseLayer {
                weight: Tensor::from_vec(&[fan_in, fan_out], data)?,
                bias: vec![S::zero(); fan_out],
                norm: (hidden && spec.layer_norm.is_some()).then(|| NormParams {
                    gain: vec![S::one(); fan_out],
                    shift: vec![S::zero(); fan_out],
                }),
            });
        }
        let velocity = layers.iter().map(DenseLayer::zeros_like).collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
            velocity,
        })
    }

    /// Reassembles a network from raw parts, checking that shapes compose.
    pub fn from_parts(
        spec: NetworkSpec,
        layers: Vec<DenseLayer<S>>,
        velocity: Vec<DenseLayer<S>>,
    ) -> Result<Self> {
        spec.validate()?;
        let template = Self::zero_template(&spec);
        if layers.len() != template.len() || velocity.len() != template.len() {
            return Err(Error::shape(
                "network depth",
                &[template.len()],
                &[layers.len()],
            ));
        }
        for (t, (p, v)) in template.iter().zip(layers.iter().zip(&velocity)) {
            if !t.same_shape(p) || !t.same_shape(v) {
                return Err(Error::shape(
                    "network layer",
                    t.weight.shape(),
                    p.weight.shape(),
                ));
            }
        }
        Ok(Self {
            spec,
            layers,
            velocity,
        })
    }

    fn zero_template(spec: &NetworkSpec) -> Vec<DenseLayer<S>> {
        let depth = spec.widths.len() - 1;
        (0..depth)
            .map(|l| DenseLayer {
                weight: Tensor::zeros(&[spec.widths[l], spec.widths[l + 1]]),
                bias: vec![S::zero(); spec.widths[l + 1]],
                norm: (l + 1 < depth && spec.layer_norm.is_some()).then(|| NormParams {
                    gain: vec![S::zero(); spec.widths[l + 1]],
                    shift: vec![S::zero(); spec.widths[l + 1]],
                }),
            })
            .collect()
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn activation(&self) -> Activation {
        self.spec.activation
    }

    pub fn hidden_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_width(&self, layer: usize) -> usize {
        self.layers[layer].fan_out()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.arrays().iter().all(|a| a.iter().all(|v| v.is_finite())))
    }

    pub fn cast<T: Scalar>(&self) -> Network<T> {
        let cast_layer = |l: &DenseLayer<S>| DenseLayer {
            weight: l.weight.cast(),
            bias: l.bias.iter().map(|v| T::of(v.as_f64())).collect(),
            norm: l.norm.as_ref().map(|n| NormParams {
                gain: n.gain.iter().map(|v| T::of(v.as_f64())).collect(),
                shift: n.shift.iter().map(|v| T::of(v.as_f64())).collect(),
            }),
        };
        Network {
            spec: self.spec.clone(),
            layers: self.layers.iter().map(cast_layer).collect(),
            velocity: self.velocity.iter().map(cast_layer).collect(),
        }
    }
}
