//! Design-based inference for stratified experiments with cluster-level
//! shocks: population simulation, stratified randomization, robust and
//! cluster-robust variance estimation, closed-form oracles, wild cluster
//! bootstrap and a Monte Carlo verification engine.

pub mod bootstrap;
pub mod design;
pub mod error;
pub mod estimators;
pub mod io;
pub mod montecarlo;
pub mod oracles;
pub mod population;
pub mod rng;

pub use error::{Error, Result};
