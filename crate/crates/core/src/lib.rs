//! Multi-objective Bayesian optimization over finite candidate sets.
//!
//! Batches are chosen by maximizing a Monte-Carlo q-expected hypervolume
//! improvement with simulated annealing that only ever moves between
//! candidate-set indices.

// Validation uses `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod annealer;
pub mod baseline;
pub mod benchmarks;
pub mod campaign;
pub mod error;
pub mod gp;
pub mod hypervolume;
pub mod pareto;
pub mod seeding;

pub use error::{Error, Result};
