use crate::config::RunConfig;
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

pub const SPEC_VERSION: &str = "1.0";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Outcome of one pass/fail check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Record of a finished run. `config` alone determines the output files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub spec_version: String,
    pub command: String,
    pub config: RunConfig,
    /// Matched step of each observed coordinate on the dense schedule.
    pub tau: Option<Vec<usize>>,
    /// Dense steps visited by the sampler.
    pub steps: Option<Vec<usize>>,
    /// SHA-256 of each output file, keyed by file name.
    pub outputs: BTreeMap<String, String>,
    pub summary: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub wall_time_s: f64,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            spec_version: SPEC_VERSION.into(),
            command: command.into(),
            config: config.clone(),
            tau: None,
            steps: None,
            outputs: BTreeMap::new(),
            summary: BTreeMap::new(),
            checks: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Hashes `dir/name` and records it as an output.
    pub fn record_output(&mut self, dir: &Path, name: &str) -> Result<()> {
        let bytes = std::fs::read(dir.join(name)).with_context(|| format!("hashing {name}"))?;
        self.outputs.insert(name.into(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n").context("writing manifest")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
