//! Functional-integral Monte Carlo for the grand canonical Bose gas and its
//! classical mean-field limit.

pub mod brownian;
pub mod cli_runner;
pub mod classical_theory;
pub mod error;
pub mod exact_oracles;
pub mod gaussian_fields;
pub mod meanfield_experiments;
pub mod quadrature;
pub mod quantum_theory;
pub mod stats;
pub mod torus_spectral;
pub mod trapped_gas;

pub use error::{Error, Result};
pub use stats::MCEstimate;
