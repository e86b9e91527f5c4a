//! Run manifests.
//!
//! Every command that writes an output directory also writes a manifest
//! listing the command, the effective seed, the configuration digest, and
//! the size of every artifact it produced. The creation timestamp is the
//! only field expected to differ between reruns of the same invocation.

use serde::{Deserialize, Serialize};
use std::time::{SystemTime, UNIX_EPOCH};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
    /// Wall-clock creation time; excluded from reproducibility comparisons.
    pub created_unix_ms: u64,
    pub outputs: Vec<OutputEntry>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config_digest: String) -> Self {
        let created_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config_digest,
            created_unix_ms,
            outputs: Vec::new(),
        }
    }

    pub fn record(&mut self, path: &str, bytes: u64) {
        self.outputs.push(OutputEntry {
            path: path.to_string(),
            bytes,
        });
    }
}
