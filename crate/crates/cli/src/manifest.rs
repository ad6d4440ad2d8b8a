//! Every run writes a manifest next to its primary output: the command,
//! tool version, resolved configuration, and content hashes of the inputs.
//! Re-running with identical inputs reproduces outputs byte for byte.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub inputs: Vec<InputRecord>,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: Vec::new(),
            config,
            outputs: Vec::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("reading input {}", path.display()))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: hex::encode(hasher.finalize()),
        });
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Write `<primary output>.manifest.json`.
    pub fn write_alongside(&self, primary_output: &Path) -> Result<PathBuf> {
        let mut name = primary_output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        let path = primary_output.with_file_name(name);
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json + "\n")
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(path)
    }
}
