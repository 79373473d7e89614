//! Append-only run manifest: one JSON entry per stage execution.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{PipelineError, Stage};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntryStatus {
    Run,
    CacheHit,
}

impl EntryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryStatus::Run => "RUN",
            EntryStatus::CacheHit => "CACHE_HIT",
        }
    }
}

impl std::fmt::Display for EntryStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// As written in the configuration for external inputs; relative to the
    /// output directory for artifacts.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: Stage,
    pub status: EntryStatus,
    /// Hash over stage, parameters and input hashes.
    pub fingerprint: String,
    pub params: Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    #[serde(default)]
    pub note: String,
    pub finished_at: DateTime<Utc>,
}

#[derive(Debug)]
pub struct Manifest {
    path: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn open(output_dir: &Path) -> Result<Self, PipelineError> {
        let path = output_dir.join(MANIFEST_FILE);
        let entries = match fs::read_to_string(&path) {
            Ok(text) => text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, l)| {
                    serde_json::from_str(l).map_err(|e| PipelineError::Manifest(format!("line {}: {e}", i + 1)))
                })
                .collect::<Result<_, _>>()?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(PipelineError::Manifest(e.to_string())),
        };
        Ok(Self { path, entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn latest(&self, stage: Stage) -> Option<&ManifestEntry> {
        self.entries.iter().rev().find(|e| e.stage == stage)
    }

    pub fn append(&mut self, entry: ManifestEntry) -> Result<(), PipelineError> {
        let mut line = serde_json::to_string(&entry).expect("plain data");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| PipelineError::Manifest(e.to_string()))?;
        f.write_all(line.as_bytes())
            .and_then(|_| f.sync_data())
            .map_err(|e| PipelineError::Manifest(e.to_string()))?;
        self.entries.push(entry);
        Ok(())
    }
}
