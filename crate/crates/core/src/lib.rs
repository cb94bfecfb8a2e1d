//! Continual Backpropagation with pluggable unit-utility estimators and a
//! reset-cost lesion assay.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the double-precision types used by default.

pub mod assay;
pub mod autodiff;
pub mod benchmarks;
pub mod cbp;
pub mod error;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod utilities;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Network = model::Network<f64>;
pub type ActivationTrace = autodiff::ActivationTrace<f64>;
pub type GradientBundle = autodiff::GradientBundle<f64>;
pub type UnitTracker = utilities::UnitTracker<f64>;
pub type ContinualBackprop = cbp::ContinualBackprop<f64>;
pub type Dataset = benchmarks::Dataset<f64>;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type Network32 = model::Network<f32>;
pub type UnitTracker32 = utilities::UnitTracker<f32>;
pub type ContinualBackprop32 = cbp::ContinualBackprop<f32>;
pub type Dataset32 = benchmarks::Dataset<f32>;
