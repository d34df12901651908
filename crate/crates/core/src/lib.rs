//! Minimax lower bounds and sample-size experiments for ReLU feed-forward networks.
//!
//! The crate is organised by concern:
//!
//! - [`model`]: bias-free ReLU networks, evaluation and the ℓ1 budget checks.
//! - [`bounds`]: closed-form lower bound, critical radius, Fano and KL helpers.
//! - [`packing`]: constant-weight codebooks and the separated shallow ensemble
//!   they induce, plus the non-negative deep factorization of its outer weights.
//! - [`montecarlo`]: seeded Gaussian sampling and estimators for the Gaussian
//!   moments the packing argument relies on.
//! - [`training`]: a small from-scratch trainer (backprop, SGD/Adam) and the
//!   teacher-student data generator.
//! - [`scaling`]: sample-size sweeps producing held-out error series.
//! - [`ratefit`]: non-negative least-squares fits of `c + a/√n` and `c + b/n`.
//!
//! Everything is `f64`, deterministic for a fixed seed, and independent of the
//! number of worker threads.

#![forbid(unsafe_code)]

pub mod bounds;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod packing;
pub mod ratefit;
pub mod rng;
pub mod scaling;
pub mod training;

pub use error::{Error, Result};
pub use model::{Matrix, NetworkParams, NetworkSpec};
