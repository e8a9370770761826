//! Numerical laboratory for a hierarchical model of quantum anharmonic oscillators.

pub mod bounds;
pub mod error;
pub mod exec;
pub mod hierarchy;
pub mod lattice;
pub mod rgflow;
pub mod spectral;
pub mod stats;
pub mod ursell;

mod divdiff;

pub use error::{Error, Result};
pub use exec::Exec;
