//! Run manifests: every artifact-producing command records what ran, on
//! which inputs, with which seed and configuration digest, and what it
//! wrote. Data outputs are byte-reproducible; the manifest carries the
//! timestamps.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub config_digest: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
}

pub fn config_digest(argv: &[String]) -> String {
    let mut hasher = Sha256::new();
    for a in argv {
        hasher.update(a.as_bytes());
        hasher.update([0x1f]);
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            inputs: Vec::new(),
            config_digest: config_digest(argv),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: String::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Finish and write next to the primary output.
    pub fn write(mut self, beside: &Path) -> Result<()> {
        self.finished_at = chrono::Utc::now().to_rfc3339();
        let path = if beside.is_dir() {
            beside.join("run.manifest.json")
        } else {
            let mut name = beside.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            beside.with_file_name(name)
        };
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}
