//! Demonstration selection for in-context learning when the annotated pool
//! is class-imbalanced.
//!
//! Candidate demonstrations are scored against a query, pre-selected into an
//! oversized pool, and rescored by a per-class factor `w + β`: effective-number
//! class weights `w` plus a conditional bias `β` estimated by Gaussian-process
//! Bayesian optimization on a balanced subset of the pool.

pub mod bayesopt;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod harness;
pub mod http;
pub mod predictor;
pub mod rng;
pub mod selection;
pub mod weights;
pub mod world;

pub use error::{Error, Result};
