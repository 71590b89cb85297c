//! Record of what a command ran with and what it wrote.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// SHA-256 of the config file written next to the manifest.
    pub config_digest: String,
    pub seed: u64,
    pub started: String,
    pub finished: String,
    /// Paths relative to the output directory.
    pub files: Vec<PathBuf>,
}

/// Collects produced files for one command invocation.
#[derive(Debug)]
pub struct ManifestBuilder {
    command: String,
    started: String,
    files: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: now(),
            files: Vec::new(),
        }
    }

    pub fn record(&mut self, out_dir: &Path, file: &Path) {
        let rel = file.strip_prefix(out_dir).unwrap_or(file).to_path_buf();
        self.files.push(rel);
    }

    /// Writes `config.toml` and `manifest.json` into `out_dir`.
    pub fn finish(mut self, cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest, CliError> {
        let config_text = cfg.to_toml()?;
        let config_path = out_dir.join(CONFIG_FILE);
        std::fs::write(&config_path, &config_text).map_err(CliError::io(&config_path))?;
        self.files.sort();
        self.files.dedup();
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: cfg.digest()?,
            seed: cfg.seed,
            started: self.started,
            finished: now(),
            files: self.files,
        };
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(CliError::io(&path))?;
        Ok(manifest)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}
