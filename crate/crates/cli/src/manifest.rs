//! Sidecar run manifests.
//!
//! Every command that writes files also writes `<primary output>.manifest.json`
//! listing the configuration, the input digests and every output it produced.

use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> io::Result<FileDigest> {
        let mut file = File::open(path)?;
        let mut hasher = Sha256::new();
        let bytes = io::copy(&mut file, &mut hasher)?;
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: hex::encode(hasher.finalize()),
            bytes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Config,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

pub fn manifest_path(primary_output: &Path) -> PathBuf {
    let mut name = primary_output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Collects what a command read and wrote, then writes the manifest.
pub struct ManifestBuilder {
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn start(command: &str, config: &Config) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                tool: "scanflow".to_owned(),
                version: env!("CARGO_PKG_VERSION").to_owned(),
                command: command.to_owned(),
                config: config.clone(),
                seed: None,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix_ms: unix_ms(),
                finished_unix_ms: 0,
            },
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let d = FileDigest::of(path).map_err(|e| CliError::io(format!("cannot hash {}: {e}", path.display())))?;
        self.manifest.inputs.push(d);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        let d = FileDigest::of(path).map_err(|e| CliError::io(format!("cannot hash {}: {e}", path.display())))?;
        self.manifest.outputs.push(d);
        Ok(())
    }

    /// Writes the manifest beside `primary_output` and returns its path.
    pub fn finish(mut self, primary_output: &Path) -> Result<PathBuf, CliError> {
        self.manifest.finished_unix_ms = unix_ms();
        let path = manifest_path(primary_output);
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| CliError::io(format!("cannot serialize manifest: {e}")))?;
        crate::commands::write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
