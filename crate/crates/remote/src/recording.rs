//! Request/response capture for offline replay.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use choicebench_core::digest::sha256_hex;
use choicebench_core::policy::ChatMessage;
use serde::{Deserialize, Serialize};

use crate::ChatRequest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub key: String,
    pub request: ChatRequest,
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Key of a request: digest of its canonical JSON body.
pub fn request_key(request: &ChatRequest) -> String {
    sha256_hex(serde_json::to_string(request).expect("requests serialize").as_bytes())
}

pub enum Recording {
    Off,
    /// Appends every exchange to a line-delimited file.
    Record(Mutex<File>),
    /// Answers from a previous recording; no network traffic.
    Replay(Mutex<HashMap<String, VecDeque<Exchange>>>),
}

impl Recording {
    pub fn record(path: &Path) -> std::io::Result<Recording> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Recording::Record(Mutex::new(f)))
    }

    pub fn replay(path: &Path) -> std::io::Result<Recording> {
        let mut map: HashMap<String, VecDeque<Exchange>> = HashMap::new();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: Exchange = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
            })?;
            map.entry(ex.key.clone()).or_default().push_back(ex);
        }
        Ok(Recording::Replay(Mutex::new(map)))
    }

    pub fn is_replay(&self) -> bool {
        matches!(self, Recording::Replay(_))
    }

    /// Next recorded answer for `key`. Answers are served in recorded
    /// order; the last one repeats once the queue is drained.
    pub fn lookup(&self, key: &str) -> Option<Exchange> {
        let Recording::Replay(map) = self else { return None };
        let mut map = map.lock().expect("replay lock");
        let queue = map.get_mut(key)?;
        if queue.len() > 1 {
            queue.pop_front()
        } else {
            queue.front().cloned()
        }
    }

    pub fn store(&self, exchange: &Exchange) -> std::io::Result<()> {
        if let Recording::Record(f) = self {
            let mut line = serde_json::to_string(exchange).expect("exchanges serialize");
            line.push('\n');
            let mut f = f.lock().expect("recording lock");
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        Ok(())
    }
}

/// Rough token count for endpoints that do not report usage.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

pub fn estimate_prompt_tokens(messages: &[ChatMessage]) -> u64 {
    messages.iter().map(|m| estimate_tokens(&m.content) + 4).sum()
}
