//! Average-reward policy gradient on tabular MDPs: environment model,
//! softmax policy classes, exact oracles, trajectory estimators, and the
//! momentum-based optimizers built on them.
//!
//! `no_std` with `alloc`; file formats and the command line live in the
//! companion `avgpg` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod algorithms;
pub mod chain;
pub mod error;
pub mod estimators;
pub mod math;
pub mod mdp;
pub mod oracle;
pub mod policy;

pub use error::{Error, Result};
pub use mdp::{PolicyTable, Simulator, Step, TabularMdp, Trajectory};
pub use policy::{PolicyKind, PolicyParams, PolicySpec};
