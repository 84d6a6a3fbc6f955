//! Multi-fidelity physics-informed surrogate for steady battery-pack
//! temperature fields.
//!
//! The crate covers the whole pipeline: random cell layouts and their
//! rasterization ([`layout`]), finite-difference and finite-volume solvers
//! ([`solver`]), a small reverse-mode autodiff engine ([`autodiff`]), the UNet
//! backbone, projection head and supervised baseline ([`nets`]), the
//! physics-informed and data losses with the two-stage trainer
//! ([`training`]), and the evaluation indices ([`metrics`]).
//!
//! Network code is generic over [`Scalar`]; training runs in `f32` and the
//! gradient checks in `f64`. Solver-side fields are always `f64`.

pub mod autodiff;
pub mod error;
pub mod fields;
pub mod layout;
pub mod metrics;
pub mod nets;
pub mod physics;
pub mod scalar;
pub mod solver;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Params32 = autodiff::ModelParams<f32>;
pub type Params64 = autodiff::ModelParams<f64>;
pub type Backbone32 = nets::Backbone<f32>;
pub type Backbone64 = nets::Backbone<f64>;
pub type Head32 = nets::Head<f32>;
pub type Head64 = nets::Head<f64>;
