//! Run-manifest sidecar written next to every output.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::Timing;

#[derive(Debug, Clone, Serialize)]
pub struct TimingEntry {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    /// SHA-256 of the canonical config, when the command has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub outputs: Vec<String>,
    pub details: BTreeMap<String, String>,
    pub timings: Vec<TimingEntry>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, threads: usize) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            threads,
            config_hash: None,
            outputs: Vec::new(),
            details: BTreeMap::new(),
            timings: Vec::new(),
        }
    }

    pub fn detail(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.details.insert(key.into(), value.to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn timings(&mut self, t: &[Timing]) -> &mut Self {
        self.timings.extend(t.iter().map(|t| TimingEntry {
            stage: t.stage.clone(),
            seconds: t.seconds,
        }));
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
