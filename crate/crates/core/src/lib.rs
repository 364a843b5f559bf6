//! Semi-supervised self-training laboratory.
//!
//! The crate bundles a small reverse-mode autodiff core ([`autodiff`], [`nn`]),
//! synthetic and file-backed datasets ([`data`]), baseline self-training
//! algorithms ([`selftrain`]), debiased self-training with a decoupled pseudo
//! head and an adversarial worst-case head ([`dst`]), bias metrics
//! ([`metrics`]) and a deterministic experiment runner ([`harness`]).
//!
//! The numeric core is generic over [`autodiff::Scalar`]; everything above it
//! trains in `f64`. The aliases below name the common instantiations.

pub mod autodiff;
pub mod data;
pub mod dst;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod selftrain;

pub use error::{Error, Result};

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Param64 = autodiff::Param<f64>;
pub type Param32 = autodiff::Param<f32>;
pub type Head64 = nn::Head<f64>;
pub type Head32 = nn::Head<f32>;
pub type FeatureGenerator64 = nn::FeatureGenerator<f64>;
pub type FeatureGenerator32 = nn::FeatureGenerator<f32>;
pub type Sgd64 = nn::SgdOptimizer<f64>;
pub type Sgd32 = nn::SgdOptimizer<f32>;
