//! Configuration and experiment runners behind the `gvstab` binary.

pub mod config;
pub mod runs;

pub use config::ExperimentConfig;
