use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Stage};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Paused,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOutcome {
    Ok,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub outcome: StageOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: Stage,
    /// Machine-readable error code, e.g. `retries_exhausted`.
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the artifact directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: RunStatus,
    pub stages: Vec<StageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn new() -> Self {
        Manifest { status: RunStatus::Completed, stages: Vec::new(), failure: None, files: Vec::new() }
    }

    pub fn record(&mut self, stage: Stage, outcome: StageOutcome, note: Option<String>) {
        self.stages.push(StageRecord { stage, outcome, note });
    }

    pub fn file(&self, path: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == path)
    }

    /// Hashes every file under `root` except the manifest itself, then writes the manifest.
    pub fn finish(&mut self, root: &Path) -> Result<(), CliError> {
        let mut files = Vec::new();
        collect(root, root, &mut files).map_err(|e| CliError::stage(Stage::Manifest, format!("hashing outputs: {e}")))?;
        files.sort_by(|a, b| a.path.cmp(&b.path));
        self.files = files;
        radlabel_core::corpus::write_json(root.join(MANIFEST_FILE), self)
            .map_err(|e| CliError::stage(Stage::Manifest, e))
    }
}

impl Default for Manifest {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sha256_file(path: &Path) -> std::io::Result<(String, u64)> {
    let bytes = std::fs::read(path)?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root).expect("under root");
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if rel == MANIFEST_FILE || rel.ends_with(".tmp") {
            continue;
        }
        let (sha256, bytes) = sha256_file(&path)?;
        out.push(FileEntry { path: rel, sha256, bytes });
    }
    Ok(())
}
