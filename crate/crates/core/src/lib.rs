//! Constrained QUBO solving with the Ohzeki method: auxiliary fields on the
//! constraints, Boltzmann samplers, and step-size schedules trained by
//! unrolling the iterations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod error;
pub mod problem;
pub mod rng;
pub mod samplers;
pub mod solver;
pub mod training;

pub use error::{Error, Result};
