use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::scalar::Scalar;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Elementwise hidden-unit nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { slope: f64 },
    Silu,
    Tanh,
}

impl Activation {
    pub fn leaky_relu() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    #[inline]
    pub fn value<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > S::zero() {
                    x
                } else {
                    S::zero()
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > S::zero() {
                    x
                } else {
                    x * S::of(slope)
                }
            }
            Activation::Silu => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative with respect to the input. ReLU and leaky ReLU take the
    /// left-hand slope at 0.
    #[inline]
    pub fn derivative<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Identity => S::one(),
            Activation::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::of(slope)
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (S::one() + x * (S::one() - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                S::one() - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky-relu",
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
        }
    }
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::LeakyRelu { slope } if *slope != DEFAULT_LEAKY_SLOPE => {
                write!(f, "leaky-relu:{slope}")
            }
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(slope) = lower
            .strip_prefix("leaky-relu:")
            .or_else(|| lower.strip_prefix("leaky_relu:"))
        {
            let slope: f64 = slope
                .parse()
                .map_err(|_| Error::Config(format!("bad leaky-relu slope in `{s}`")))?;
            return Ok(Activation::LeakyRelu { slope });
        }
        match lower.as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "leaky-relu" | "leaky_relu" | "lrelu" | "leakyrelu" => Ok(Activation::leaky_relu()),
            "silu" | "swish" => Ok(Activation::Silu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::Config(format!(
                "unknown activation `{s}` (valid: identity, relu, leaky-relu, silu, tanh)"
            ))),
        }
    }
}
