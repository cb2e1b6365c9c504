//! Experiment harness: JSON configs, trace files, the `avgpg` CLI and the
//! verification suites.

pub mod config;
pub mod error;
pub mod io;
pub mod runner;
pub mod solve;
pub mod verify;

pub use config::{Algorithm, ExperimentConfig, MdpFile, ResolvedExperiment};
pub use error::HarnessError;
