//! Trial records and their append-only store.
//!
//! A store directory holds `records.jsonl` (one record per line) and
//! `completed.idx` (one record key per line). The record file is
//! authoritative; the index is rebuilt from it when they disagree.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interventions::Slot;
use crate::policy::Usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Chosen { slot: Slot },
    Timeout,
    Failed,
}

impl Outcome {
    pub fn chosen_slot(&self) -> Option<Slot> {
        match self {
            Outcome::Chosen { slot } => Some(*slot),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Agent,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config_id: String,
    pub source: Source,
    pub outcome: Outcome,
    /// Environment steps; absent for human trials.
    #[serde(default)]
    pub steps: Option<u32>,
    #[serde(default)]
    pub chosen_product_id: Option<String>,
    #[serde(default)]
    pub trace_digest: Option<String>,
    #[serde(default)]
    pub usage: Option<Usage>,
    #[serde(default)]
    pub failure: Option<String>,
    #[serde(default)]
    pub participant_id: Option<String>,
    #[serde(default)]
    pub rationale: Option<String>,
    #[serde(default)]
    pub response_ms: Option<u64>,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
}

impl TrialRecord {
    /// Store key: the config id, qualified by participant for human trials.
    pub fn key(&self) -> String {
        match &self.participant_id {
            Some(p) => format!("{}#{p}", self.config_id),
            None => self.config_id.clone(),
        }
    }

    /// Copy without wall-clock fields, for comparing runs.
    pub fn without_timing(&self) -> TrialRecord {
        let mut r = self.clone();
        r.started_at_ms = 0;
        r.finished_at_ms = 0;
        if let Some(u) = r.usage.as_mut() {
            u.latency_ms = 0;
        }
        r
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record at {path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("{0} already has a record")]
    Duplicate(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Append-only record store keyed by [`TrialRecord::key`].
#[derive(Debug)]
pub struct RecordStore {
    records_path: PathBuf,
    index_path: PathBuf,
    records: File,
    index: File,
    completed: HashSet<String>,
}

pub const RECORDS_FILE: &str = "records.jsonl";
pub const INDEX_FILE: &str = "completed.idx";

impl RecordStore {
    /// Opens or creates a store. A partially written final line (from a
    /// crash mid-append) is truncated away; the index is rewritten from the
    /// surviving records.
    pub fn open(dir: &Path) -> Result<RecordStore, StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let records_path = dir.join(RECORDS_FILE);
        let index_path = dir.join(INDEX_FILE);
        let mut completed = HashSet::new();
        let mut good_len = 0u64;
        if records_path.exists() {
            let bytes = fs::read(&records_path).map_err(io_err(&records_path))?;
            let mut offset = 0usize;
            for (i, raw) in bytes.split_inclusive(|b| *b == b'\n').enumerate() {
                if !raw.ends_with(b"\n") {
                    break;
                }
                let text = String::from_utf8_lossy(raw);
                let text = text.trim();
                if !text.is_empty() {
                    let r = serde_json::from_str::<TrialRecord>(text).map_err(|e| StoreError::Corrupt {
                        path: records_path.clone(),
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                    completed.insert(r.key());
                }
                offset += raw.len();
                good_len = offset as u64;
            }
            if good_len < bytes.len() as u64 {
                let f = OpenOptions::new().write(true).open(&records_path).map_err(io_err(&records_path))?;
                f.set_len(good_len).map_err(io_err(&records_path))?;
            }
        }
        let records = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&records_path)
            .map_err(io_err(&records_path))?;
        let mut ids: Vec<&String> = completed.iter().collect();
        ids.sort();
        let mut index_text = String::new();
        for id in ids {
            index_text.push_str(id);
            index_text.push('\n');
        }
        fs::write(&index_path, index_text).map_err(io_err(&index_path))?;
        let index = OpenOptions::new().append(true).open(&index_path).map_err(io_err(&index_path))?;
        Ok(RecordStore {
            records_path,
            index_path,
            records,
            index,
            completed,
        })
    }

    /// True when a record with this key exists (see [`TrialRecord::key`]).
    pub fn is_completed(&self, key: &str) -> bool {
        self.completed.contains(key)
    }

    pub fn completed_count(&self) -> usize {
        self.completed.len()
    }

    /// Writes one record as a single line, then marks it completed.
    pub fn append(&mut self, record: &TrialRecord) -> Result<(), StoreError> {
        let key = record.key();
        if self.completed.contains(&key) {
            return Err(StoreError::Duplicate(key));
        }
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        self.records
            .write_all(line.as_bytes())
            .and_then(|_| self.records.flush())
            .map_err(io_err(&self.records_path))?;
        writeln!(self.index, "{key}")
            .and_then(|_| self.index.flush())
            .map_err(io_err(&self.index_path))?;
        self.completed.insert(key);
        Ok(())
    }

    pub fn read_all(&self) -> Result<Vec<TrialRecord>, StoreError> {
        read_records(&self.records_path)
    }
}

/// Reads every record from a records file.
pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}
