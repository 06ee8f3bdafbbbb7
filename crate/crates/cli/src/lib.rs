//! Experiment driver: recursion sweeps, training arms, rate estimation,
//! verification suites and penalty curves, each writing CSVs plus a manifest.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod svg;
pub mod verify;

use std::path::PathBuf;

pub use config::ExperimentConfig;
pub use manifest::{Output, RunManifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] ncgrpo_core::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Core(_) | CliError::Failed(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Reclassifies a library error raised while checking configuration.
    pub fn into_config(self) -> Self {
        match self {
            CliError::Core(e) => CliError::Config(format!("config: {e}")),
            other => other,
        }
    }
}

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
