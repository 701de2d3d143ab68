use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::Result;

/// A file produced by an experiment, kept in memory until written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    pub fn new(name: impl Into<String>, contents: impl Into<String>) -> Self {
        Artifact { name: name.into(), contents: contents.into() }
    }

    pub fn json<T: Serialize>(name: impl Into<String>, value: &T) -> Result<Self> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        Ok(Artifact::new(name, s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub pdmm: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub versions: Versions,
    pub files: Vec<String>,
    /// Kind-specific outcome summary.
    pub summary: serde_json::Value,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig, files: &[Artifact], summary: serde_json::Value) -> Self {
        Manifest {
            experiment: cfg.kind.tag().to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            config: cfg.clone(),
            versions: Versions { pdmm: env!("CARGO_PKG_VERSION").to_string() },
            files: files.iter().map(|a| a.name.clone()).collect(),
            summary,
        }
    }
}

/// Writes every artifact into `dir`, creating it if needed.
pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for a in artifacts {
        fs::write(dir.join(&a.name), &a.contents)?;
    }
    Ok(())
}
