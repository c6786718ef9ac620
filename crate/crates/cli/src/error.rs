use std::path::PathBuf;

use patchtune_core::datagen::DatagenError;
use patchtune_core::dataset::DatasetError;
use patchtune_core::experiment::ExperimentError;
use patchtune_core::metrics::MetricsError;
use patchtune_core::model::ModelError;
use thiserror::Error;

use crate::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Json { .. } => "json",
            CliError::Dataset(_) => "dataset",
            CliError::Datagen(_) => "datagen",
            CliError::Experiment(_) => "experiment",
            CliError::Model(_) => "model",
            CliError::Metrics(_) => "metrics",
            CliError::Checkpoint(CheckpointError::Checksum) => "checksum",
            CliError::Checkpoint(CheckpointError::Io { .. }) => "io",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Csv(_) => "csv",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Checkpoint(CheckpointError::Io { .. }) => 3,
            _ => 1,
        }
    }
}
