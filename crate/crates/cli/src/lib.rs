//! Configuration, checkpoint persistence, and command implementations for
//! the `softmoe` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::{load_model, save_model, CheckpointError};
pub use commands::{cmd_bench, cmd_experiment, cmd_train, CliError, ExperimentKind};
pub use config::{ConfigError, RunConfig};
