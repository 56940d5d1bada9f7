//! Experiment configuration, task construction, run loop and sweeps.

mod config;
mod experiment;
mod sweep;
mod tasks;

pub use config::*;
pub use experiment::*;
pub use sweep::*;
pub use tasks::*;
