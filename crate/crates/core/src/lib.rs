//! Simulation and analysis of stealthy attacks on double-integrator consensus
//! networks, with cluster-level unknown-input observers that trigger topology
//! switches and a privacy-preserving central observer.
//!
//! Node indices are 0-based in the API and 1-based in scenario files, CSV
//! headers and JSON reports. Mode 0 is the normal mode.

pub mod error;
pub mod numerics;
pub mod topology;
pub mod plant;
pub mod adversary;
pub mod observers;
pub mod analysis;
pub mod harness;

pub use error::{Error, Result};
