//! Run manifest: what ran, with which inputs, and what it produced.
//!
//! Two runs of the same config and seed produce identical manifests apart
//! from `created_unix`, which is always the last field.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Algorithm, ModelKind, RunConfig, Stage};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stage: Stage,
    pub model: ModelKind,
    /// Set for inference runs only.
    pub algorithm: Option<Algorithm>,
    pub seed: u64,
    pub config_sha256: String,
    pub dataset_sha256: Option<String>,
    /// Calls that reached the simulator, counted at the model boundary.
    pub total_simulations: u64,
    /// Count reported by the algorithm itself, where it keeps one.
    pub algorithm_simulations: Option<u64>,
    pub files: Vec<FileEntry>,
    /// Outputs that hold wall-clock measurements and so differ between runs.
    pub volatile_files: Vec<String>,
    /// Resolved configuration, with the output directory left out.
    pub config: RunConfig,
    pub created_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// The config as recorded: where the outputs went is not part of the run.
pub fn recorded_config(cfg: &RunConfig) -> RunConfig {
    RunConfig {
        output: None,
        ..cfg.clone()
    }
}

pub fn config_hash(cfg: &RunConfig) -> String {
    sha256_hex(&serde_json::to_vec(&recorded_config(cfg)).expect("config serialises"))
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        std::fs::write(dir.join(FILE_NAME), self.to_json())
    }

    pub fn read(dir: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(dir.join(FILE_NAME))?;
        serde_json::from_str(&text).map_err(io::Error::other)
    }
}

/// Drops the timestamp line so manifests can be compared byte for byte.
pub fn without_timestamp(json: &str) -> String {
    json.lines()
        .filter(|l| !l.trim_start().starts_with("\"created_unix\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn output_directory_does_not_change_the_hash() {
        let a = RunConfig::default();
        let b = RunConfig {
            output: Some("/elsewhere".into()),
            ..RunConfig::default()
        };
        assert_eq!(config_hash(&a), config_hash(&b));
        let c = RunConfig { seed: 1, ..a };
        assert_ne!(config_hash(&c), config_hash(&b));
    }
}
