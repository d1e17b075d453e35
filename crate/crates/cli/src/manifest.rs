//! Persisted record of a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStatus {
    pub seed: u64,
    pub ok: bool,
    /// `"<analysis>: <message>"` per failed step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub analysis: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub tool_version: String,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
    pub config: serde_json::Value,
    /// Output files per analysis, relative to the manifest directory.
    pub outputs: BTreeMap<String, Vec<PathBuf>>,
    pub seeds: Vec<SeedStatus>,
    pub checks: Vec<Check>,
}

impl RunManifest {
    /// No failed seed and no failed check.
    pub fn success(&self) -> bool {
        self.seeds.iter().all(|s| s.ok) && self.checks.iter().all(|c| c.passed)
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let w = difflab_core::io::create(&path)?;
        serde_json::to_writer_pretty(w, self).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
