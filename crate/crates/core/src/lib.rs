//! Evaluator-generator re-ranking laboratory.
//!
//! The crate bundles a small deterministic differentiable core ([`tensor`],
//! [`nn`], [`optim`], [`gradcheck`]), a ground-truth slate simulator
//! ([`sim`]), the learned list evaluator, the sequential generator trained by
//! clipped policy optimization, the adversarial discriminator used for reward
//! shaping, a baseline suite, ranking metrics, and the experiment harness
//! that ties them together.

pub mod baselines;
pub mod checkpoint;
pub mod discriminator;
pub mod error;
pub mod evaluator;
pub mod generator;
pub mod gradcheck;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};
pub use params::ParameterSet;
pub use tensor::Tensor;
