//! Simulation, volatility filtering and local-risk-minimizing hedging for
//! time-discrete auto-regressive stochastic volatility (ARSV) markets.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod error;
pub mod filters;
pub mod harness;
pub mod kernels;
pub mod lrm;
pub mod model;
pub mod rng;

pub use error::{ArsvError, Result};
