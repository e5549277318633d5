//! Simulation and analysis of a cavity-enhanced heralded single-photon
//! source: trigger clicks plus continuous homodyne records, temporal-mode
//! quadrature extraction, maximum-likelihood state reconstruction, Wigner
//! functions, and the hybrid click/homodyne cross-correlation.

pub mod config;
pub mod correlation;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod selfcheck;
pub mod extraction;
pub mod simulator;
pub mod stats;
pub mod tomography;

pub use error::{Error, Result, TraceFileError};
