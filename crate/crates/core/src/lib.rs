//! Knöthe–Rosenblatt transport from a standard Gaussian reference to
//! Gaussian-mixture targets, and Monte-Carlo checks of the entropy power
//! inequality built on it.
//!
//! Module map:
//!
//! - [`numerics`]: quadrature, monotone root finding, normal CDF/quantile
//! - [`densities`]: Gaussian mixtures with closed-form marginals and conditionals
//! - [`transport`]: triangular maps, the combined map used by the coupling
//!   argument, inverse-transform sampling
//! - [`entropy`]: differential entropy by several independent routes
//! - [`epi`]: the inequality, its gap decomposition, equality diagnostics
//! - [`rng`], [`mc`], [`stats`]: counter-based streams, chunked reductions,
//!   goodness-of-fit helpers

pub mod densities;
pub mod entropy;
pub mod epi;
pub mod error;
pub mod mc;
pub mod numerics;
pub mod rng;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
