//! Configuration files, parameter sweeps, result files and the command line
//! for the `trisnoma-core` solver.

pub mod cli;
pub mod config;
pub mod oracles;
pub mod output;
pub mod selftest;
pub mod sweep;

pub use config::{Config, ConfigError};
pub use sweep::{sweep, SweepResult, SweepSpec, SweepVar};
