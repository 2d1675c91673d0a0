//! Goodness-of-fit testing, likelihood-free testing and estimation in the
//! Gaussian sequence model over weighted lp bodies.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`). The `*64` and
//! `*32` aliases below fix the scalar type.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bodies;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod mc;
pub mod rng;
pub mod sampling_priors;
pub mod scalar;
pub mod testing;

pub use error::{GsmError, Result};
pub use rng::RngStreamSpec;
pub use scalar::Real;

pub type LpBody64 = bodies::LpBody<f64>;
pub type LpBody32 = bodies::LpBody<f32>;
pub type ThetaVector64 = bodies::ThetaVector<f64>;
pub type ThetaVector32 = bodies::ThetaVector<f32>;
pub type Dataset64 = sampling_priors::Dataset<f64>;
pub type Dataset32 = sampling_priors::Dataset<f32>;
pub type ProductPrior64 = sampling_priors::ProductPrior<f64>;
pub type ProductPrior32 = sampling_priors::ProductPrior<f32>;
