//! `out_dir/<timestamp>-<confighash>/` with `manifest.json`, `metrics.jsonl`,
//! `checkpoints/` and the ablation CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;

/// Version of the manifest, `metrics.jsonl` and CSV layouts.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub code_version: String,
    pub started_at: String,
    pub finished_at: String,
    /// `completed` or `failed`.
    pub status: String,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub summary: serde_json::Value,
}

pub fn code_version() -> String {
    format!("cgpo-cli {}", env!("CARGO_PKG_VERSION"))
}

pub fn timestamp() -> String {
    chrono::Utc::now().format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Creates a fresh directory; a numeric suffix avoids collisions.
    pub fn create(out_dir: &Path, config_hash: &str) -> Result<Self> {
        fs::create_dir_all(out_dir)?;
        let stem = format!("{}-{}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"), &config_hash[..12.min(config_hash.len())]);
        let mut path = out_dir.join(&stem);
        let mut n = 1;
        while path.exists() {
            n += 1;
            path = out_dir.join(format!("{stem}-{n}"));
        }
        fs::create_dir(&path)?;
        fs::create_dir(path.join("checkpoints"))?;
        Ok(Self { path })
    }

    pub fn metrics(&self) -> PathBuf {
        self.path.join("metrics.jsonl")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.path.join("checkpoints")
    }

    pub fn manifest(&self) -> PathBuf {
        self.path.join("manifest.json")
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<()> {
        write_atomic(&self.manifest(), &serde_json::to_vec_pretty(manifest)?)
    }
}

/// Write to a sibling temp file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
