//! Per-command record of inputs and outputs with SHA-256 digests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Option<FileDigest>,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digest(path: &Path) -> Result<FileDigest, CliError> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

impl RunManifest {
    pub fn new(command: &str, config: Option<&Path>, seed: u64, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<Self, CliError> {
        let all = |ps: &[PathBuf]| ps.iter().map(|p| digest(p)).collect::<Result<Vec<_>, _>>();
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.map(digest).transpose()?,
            seed,
            inputs: all(inputs)?,
            outputs: all(outputs)?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Files whose current digest differs from the recorded one (or that are gone).
    pub fn mismatches(&self) -> Vec<String> {
        self.config
            .iter()
            .chain(&self.inputs)
            .chain(&self.outputs)
            .filter(|d| sha256_file(Path::new(&d.path)).map_or(true, |h| h != d.sha256))
            .map(|d| d.path.clone())
            .collect()
    }

    pub fn verify(&self) -> Result<(), CliError> {
        let bad = self.mismatches();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!("digest mismatch for {}", bad.join(", "))))
        }
    }
}
