//! Per-run provenance record.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// The effective configuration after overrides.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
    pub wall_clock_secs: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects the manifest while a command runs.
pub struct Recorder {
    started: Instant,
    pub manifest: RunManifest,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Self {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                args: std::env::args().skip(1).collect(),
                config: serde_json::Value::Null,
                seed: None,
                version: env!("CARGO_PKG_VERSION").to_string(),
                threads: rayon::current_num_threads(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                wall_clock_secs: 0.0,
                notes: Vec::new(),
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        let sha256 = sha256_file(path)?;
        self.manifest.inputs.push(FileDigest { path: path.display().to_string(), sha256 });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    pub fn finish(mut self, path: &Path) -> ndm::Result<()> {
        self.manifest.wall_clock_secs = self.started.elapsed().as_secs_f64();
        ndm::io::write_json(path, &self.manifest)
    }
}
