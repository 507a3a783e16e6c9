//! Run manifest embedded in every output JSON: what ran, with which
//! resolved configuration and seed, over which inputs (content-hashed).
//! Identical manifests imply identical outputs; only the wall-clock block
//! varies between reruns.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use spectral_adapt_core::cache::hash_file;
use spectral_adapt_core::Result;

#[derive(Debug, Clone, Serialize)]
pub struct WallClock {
    pub started_unix_ms: u128,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub resolved_config: serde_json::Value,
    pub seed: u64,
    pub input_hashes: BTreeMap<String, String>,
    pub tool_version: String,
    pub wall_clock: WallClock,
}

pub struct ManifestBuilder {
    command: String,
    resolved_config: serde_json::Value,
    seed: u64,
    input_hashes: BTreeMap<String, String>,
    started: SystemTime,
}

impl ManifestBuilder {
    pub fn new(command: &str, resolved_config: serde_json::Value, seed: u64) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            resolved_config,
            seed,
            input_hashes: BTreeMap::new(),
            started: SystemTime::now(),
        }
    }

    /// Record the content hash of one input file.
    pub fn hash_input(&mut self, path: &Path) -> Result<()> {
        let h = hash_file(path)?;
        self.input_hashes
            .insert(path.display().to_string(), format!("{h:016x}"));
        Ok(())
    }

    /// Hash the standard files of a dataset directory, skipping absent ones.
    pub fn hash_dataset_dir(&mut self, dir: &Path) -> Result<()> {
        for name in ["edges.tsv", "labels.tsv", "features.tsv", "features.bin", "manifest.json"] {
            let p = dir.join(name);
            if p.exists() {
                self.hash_input(&p)?;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> RunManifest {
        let started_unix_ms = self
            .started
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let elapsed_ms = self.started.elapsed().map(|d| d.as_millis()).unwrap_or(0);
        RunManifest {
            command: self.command,
            resolved_config: self.resolved_config,
            seed: self.seed,
            input_hashes: self.input_hashes,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock: WallClock { started_unix_ms, elapsed_ms },
        }
    }
}
