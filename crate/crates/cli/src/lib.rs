//! The `ecglatent` pipeline as a library: configuration, artifacts and the
//! seven subcommands. `main.rs` only parses arguments and maps errors to
//! exit codes.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod svg;

use std::path::{Path, PathBuf};

use ecglatent_core::latent_models::LatentError;
use ecglatent_core::metrics::MetricsError;
use ecglatent_core::preprocess::PreprocessError;
use ecglatent_core::signal_io::SignalError;
use thiserror::Error;

pub use commands::{run, Command, Outcome};
pub use config::{ModelKind, Overrides, RunConfig, Selection};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error("missing {}: run `ecglatent {command}` first", path.display())]
    MissingArtifact { path: PathBuf, command: String },
    #[error("bad artifact: {0}")]
    Artifact(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Model(#[from] LatentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit code of each error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::Artifact(_) => 4,
            CliError::Io { .. } => 5,
            CliError::Signal(_) | CliError::Preprocess(_) => 6,
            CliError::Model(_) | CliError::Metrics(_) => 7,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingArtifact { .. } => "missing-artifact",
            CliError::Artifact(_) => "artifact",
            CliError::Io { .. } => "io",
            CliError::Signal(_) | CliError::Preprocess(_) => "data",
            CliError::Model(_) | CliError::Metrics(_) => "model",
        }
    }
}
