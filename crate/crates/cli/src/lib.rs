//! File formats, checkpoints, configuration and command implementations for
//! the `patchtune` CLI. The numerical work lives in `patchtune_core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;

pub use config::HarnessConfig;
pub use error::CliError;
