//! Discrete kernel smoothing of count pmfs with mean-parametrized
//! Conway-Maxwell-Poisson (CMP) kernels.
//!
//! - [`cmp_dist`]: CMP normalizer, rate solve, kernels.
//! - [`estimators`]: CMP, histogram, triangular and binomial estimators.
//! - [`bandwidth`]: minimax-KL and leave-one-out bandwidth selection.
//! - [`metrics`]: ISE, tail probabilities, tail relative error.
//! - [`sim`]: target mixtures, seeded sampling, Monte Carlo studies.

pub mod bandwidth;
pub mod cmp_dist;
pub mod error;
pub mod estimators;
pub mod metrics;
pub mod pmf;
pub mod sim;
mod serde_float;

pub use error::{Error, Result};
