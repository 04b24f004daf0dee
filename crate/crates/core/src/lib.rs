//! Backprop-free optimization with low-rank evolution strategies.
//!
//! The crate is organised bottom-up:
//!
//! * [`prng`] names every noise stream by a handful of scalars so that any
//!   perturbation can be regenerated instead of stored.
//! * [`lowrank`] samples rank-`r` factors, evaluates perturbed layers through
//!   the decomposed `xμᵀ + (σ/√r)(xB)Aᵀ` path and aggregates population
//!   updates as one stacked matrix product.
//! * [`scorefn`] holds the Gaussian-limit and mean-field (Bessel) score
//!   approximators together with the marginal densities they come from.
//! * [`shaping`] transforms raw fitnesses before aggregation.
//! * [`es`] is the optimization loop, the dense OpenES baseline and the
//!   Monte Carlo gradient estimator used for the rank-convergence study.
//! * [`egg`] is the pure-integer GRU language model and [`int_es`] trains it
//!   with integer-only updates.

pub mod egg;
pub mod error;
pub mod es;
pub mod int_es;
pub mod lowrank;
pub mod prng;
pub mod scorefn;
pub mod shaping;

pub use error::{Error, Result};
