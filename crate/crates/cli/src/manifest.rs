//! Run manifests: `<output>.manifest.json` beside each written file.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Every flag the command ran with, after defaults and environment
    /// fallbacks were applied.
    pub config: Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_hash: Option<String>,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Where the manifest for `output` lives.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config).expect("arguments serialize"),
            inputs: Vec::new(),
            outputs: Vec::new(),
            model_hash: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn model_hash(mut self, hash: String) -> Self {
        self.model_hash = Some(hash);
        self
    }

    /// Writes one copy of the manifest beside every listed output.
    pub fn write(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        for out in &self.outputs {
            crate::write_file(&manifest_path(Path::new(out)), &text)?;
        }
        Ok(())
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
