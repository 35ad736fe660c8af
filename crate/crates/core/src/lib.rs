//! Compressed-sensing reconstruction with Expectation Propagation under a
//! spike-and-slab prior, plus the tooling to map its phase diagram.

pub mod cli;
pub mod density;
pub mod ep;
pub mod error;
pub mod io;
pub mod metrics;
pub mod omp;
pub mod phase;
pub mod prior;
pub mod problem;
pub mod rng;

pub use error::{Error, Result};
