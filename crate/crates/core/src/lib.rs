//! Limit theory of continuous-state branching processes: cumulant solvers,
//! non-linear renormalizers, flows of subordinators and extremal processes.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod config;
pub mod cumulant;
pub mod error;
pub mod expr;
pub mod extremal;
pub mod mechanism;
pub mod parallel;
pub mod quad;
pub mod renorm;
pub mod sampler;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
