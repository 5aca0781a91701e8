//! Regularized generalized score matching for pairwise power-interaction
//! models of compositional data.
//!
//! Data live on the probability simplex. The density family is
//! `p(x) ∝ exp(−(1/2a) x^aᵀ K x^a + (1/b) ηᵀ x^b)` with `x^0 ≡ log x`. The
//! estimator minimizes a weighted Fisher-divergence loss, which is quadratic
//! in `(K, η)`, plus an ℓ1 penalty on the off-diagonal of `K` and on `η`.
//!
//! Modules, bottom up:
//! - [`model`]: domain types, density kernel, validity checks, log-ratio maps.
//! - [`weights`]: boundary distances `φ` and power weights `h`.
//! - [`assembly`]: the quadratic loss `(Γ, g)` and a direct-evaluation oracle.
//! - [`solver`]: coordinate descent and regularization paths.
//! - [`sampling`]: Dirichlet, logistic-normal and MCMC samplers.
//! - [`evaluation`]: ROC/AUC, norm errors, cross validation.
//! - [`inference`]: permutation tests for differential networks.

// `!(x >= 0.0)` style guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod error;
pub mod model;
pub mod evaluation;
pub mod inference;
mod parallel;
pub mod sampling;
pub mod solver;
pub mod weights;

pub use error::{Error, Result};

/// Library version, recorded in every machine-readable output.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
