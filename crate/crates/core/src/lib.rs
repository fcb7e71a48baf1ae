//! Parsimonious latent dynamics: encoders that map observations into a latent
//! space where transitions are explained by a small, action-predictable set of
//! learned rotations and translations, evaluated with discrete soft
//! actor-critic and cross-entropy-method planning on synthetic navigation
//! tasks.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the precision for common uses.

pub mod baselines;
pub mod checkpoint;
pub mod diffmath;
pub mod envs;
pub mod error;
pub mod harness;
pub mod model;
pub mod planner;
pub mod sac;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases.
pub type ParsimonyModelF64 = model::ParsimonyModel<f64>;
pub type VaeModelF64 = baselines::VaeModel<f64>;
pub type RnnModelF64 = baselines::RnnModel<f64>;
pub type SsmModelF64 = baselines::SsmModel<f64>;
pub type SacAgentF64 = sac::SacAgent<f64>;
pub type GraphF64 = diffmath::Graph<f64>;

/// Single-precision aliases.
pub type ParsimonyModelF32 = model::ParsimonyModel<f32>;
pub type VaeModelF32 = baselines::VaeModel<f32>;
pub type RnnModelF32 = baselines::RnnModel<f32>;
pub type SsmModelF32 = baselines::SsmModel<f32>;
pub type SacAgentF32 = sac::SacAgent<f32>;
pub type GraphF32 = diffmath::Graph<f32>;
