//! Adversarial curriculum training over level distributions.
//!
//! An agent policy and a level-distribution adversary play a regularized
//! min-max game: the adversary does projected gradient ascent on an
//! entropy-regularized expected score over a finite level buffer, while the
//! policy descends a sampled policy gradient at a much smaller step size.
//! The crate ships the two desk-scale environments, the score functions,
//! the training loops (static-buffer and dynamic-buffer variants), baseline
//! samplers, held-out/CVaR evaluation, and the analysis machinery that
//! computes convergence constants and stationarity diagnostics.

// `!(x > 0.0)` style guards are deliberate: they reject NaN along with the
// out-of-range values, which `x <= 0.0` would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod analysis;
pub mod baselines;
pub mod buffer;
pub mod config;
pub mod csvio;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod policy;
pub mod rng;
pub mod scoring;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
