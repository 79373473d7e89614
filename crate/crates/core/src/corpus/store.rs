//! Line-delimited JSON corpus store. Every line is one record carrying its
//! own `schema_version`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{House, SpeechRecord};
use crate::util::atomic_write;

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("corpus store I/O at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: unsupported corpus schema version {found} (this build reads {CORPUS_SCHEMA_VERSION})")]
    Version { line: usize, found: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Serialize)]
struct RowOut<'a> {
    schema_version: u32,
    speech_id: &'a str,
    speaker_name: &'a str,
    party: &'a str,
    house: House,
    date: NaiveDate,
    text: &'a str,
    matched_queries: &'a BTreeSet<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RowIn {
    #[allow(dead_code)]
    schema_version: u32,
    speech_id: String,
    speaker_name: String,
    party: String,
    house: House,
    date: NaiveDate,
    text: String,
    matched_queries: BTreeSet<String>,
}

pub fn store_corpus(records: &[SpeechRecord], path: &Path) -> Result<(), StoreError> {
    let mut buf = Vec::new();
    for r in records {
        let row = RowOut {
            schema_version: CORPUS_SCHEMA_VERSION,
            speech_id: &r.speech_id,
            speaker_name: &r.speaker_name,
            party: &r.party,
            house: r.house,
            date: r.date,
            text: &r.text,
            matched_queries: &r.matched_queries,
        };
        serde_json::to_writer(&mut buf, &row).expect("serializing plain data");
        buf.push(b'\n');
    }
    atomic_write(path, &buf).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_corpus(path: &Path) -> Result<Vec<SpeechRecord>, StoreError> {
    let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| StoreError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        match value.get("schema_version") {
            Some(v) if v.as_u64() == Some(CORPUS_SCHEMA_VERSION as u64) => {}
            Some(v) => {
                return Err(StoreError::Version {
                    line: line_no,
                    found: v.to_string(),
                })
            }
            None => {
                return Err(StoreError::Parse {
                    line: line_no,
                    message: "missing schema_version".into(),
                })
            }
        }
        let row: RowIn = serde_json::from_value(value).map_err(|e| StoreError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(SpeechRecord {
            speech_id: row.speech_id,
            speaker_name: row.speaker_name,
            party: row.party,
            house: row.house,
            date: row.date,
            text: row.text,
            matched_queries: row.matched_queries,
        });
    }
    Ok(out)
}
