//! Run manifest: config hash, versions, per-stage status and a digest of
//! every emitted file.

use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: Status,
    pub error: Option<String>,
    pub elapsed_seconds: f64,
    pub finished_unix: u64,
    /// Paths relative to the output directory.
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub runner_version: String,
    pub core_version: String,
    pub seed: u64,
    pub created_unix: u64,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileRecord>,
    pub warnings: Vec<String>,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn file_record(root: &Path, rel: &Path) -> Result<FileRecord> {
    let bytes = std::fs::read(root.join(rel)).with_context(|| format!("reading {}", rel.display()))?;
    Ok(FileRecord {
        path: rel.to_path_buf(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

impl RunManifest {
    pub fn load(dir: &Path) -> Option<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Replaces the record of each stage in `records`, keeping the others.
    pub fn merge_stages(&mut self, records: Vec<StageRecord>) {
        for r in records {
            match self.stages.iter_mut().find(|s| s.stage == r.stage) {
                Some(s) => *s = r,
                None => self.stages.push(r),
            }
        }
    }

    /// Digests every file named by a stage, sorted by path.
    pub fn refresh_files(&mut self, root: &Path) -> Result<()> {
        let mut paths: Vec<PathBuf> = self.stages.iter().flat_map(|s| s.files.iter().cloned()).collect();
        paths.sort();
        paths.dedup();
        self.files = paths.iter().map(|p| file_record(root, p)).collect::<Result<_>>()?;
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn all_completed(&self) -> bool {
        self.stages.iter().all(|s| s.status == Status::Completed)
    }
}
