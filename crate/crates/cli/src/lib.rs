//! Command-line pipeline: simulate ring datasets, train the reducers, embed
//! windows into the latent plane, estimate densities and classify modes by
//! Wasserstein distance.

use std::path::{Path, PathBuf};

pub mod commands;
pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod svg;

pub use commands::Context;
pub use config::Config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("missing input file {}", .0.display())]
    Missing(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] oscmode::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 3 for numerical failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}
