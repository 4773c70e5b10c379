//! Surrogate-based hyperparameter optimization over integer lattices.

pub mod benchmark;
pub mod cli;
pub mod domain;
pub mod engine;
pub mod error;
pub mod models;
pub mod objective;
pub mod persist;
pub mod sampler;
pub mod seeds;
pub mod surrogate;
pub mod uq;

pub use error::{Error, Result};
