//! Per-command run manifest: records what was run, with which inputs,
//! configuration, and results. In deterministic mode wall-clock timings
//! are omitted so reruns produce byte-identical manifests.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::ioutil::write_atomic;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub deterministic: bool,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Wall-clock seconds; absent in deterministic mode.
    pub wall_time_s: Option<f64>,
    pub result: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, deterministic: bool, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            deterministic,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_time_s: None,
            result: serde_json::Value::Null,
        }
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}
