//! Online feedback optimization of recommendations on a simulated social
//! network.
//!
//! The crate closes a projected-gradient recommender around an extended
//! Friedkin–Johnsen opinion model. The controller only sees clicks: neural
//! estimators recover steady-state opinions and clicking behaviour, a Kalman
//! filter learns the input-output sensitivity of the network, and forward
//! differences provide engagement gradients.

// `!(x > 0.0)` style checks are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod controller;
pub mod error;
pub mod estimators;
pub mod filter;
pub mod harness;
pub mod metrics;
pub mod platform;
pub mod seeds;

pub use error::{Error, Result};
