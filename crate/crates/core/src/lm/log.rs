use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ChatMessage;
use crate::error::{Error, Result};

/// One line of the JSONL request log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub timestamp: String,
    /// `"query"` for synthesis calls, `"proposal"` for instruction proposals.
    pub kind: String,
    pub template_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage_id: Option<String>,
    pub prompt: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    /// `parsed`, `fallback`, `empty`, or `error`.
    pub parse_status: String,
    pub attempts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

enum Sink {
    File(BufWriter<File>),
    Memory(Vec<LogRecord>),
}

/// Append-only request log, safe to share between threads.
pub struct RequestLog {
    sink: Mutex<Sink>,
}

impl RequestLog {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            sink: Mutex::new(Sink::File(BufWriter::new(file))),
        })
    }

    pub fn in_memory() -> Self {
        Self {
            sink: Mutex::new(Sink::Memory(Vec::new())),
        }
    }

    pub fn append(&self, record: LogRecord) -> Result<()> {
        let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        match &mut *sink {
            Sink::File(w) => {
                serde_json::to_writer(&mut *w, &record)?;
                w.write_all(b"\n")
                    .and_then(|_| w.flush())
                    .map_err(|e| Error::io("request log", e))
            }
            Sink::Memory(v) => {
                v.push(record);
                Ok(())
            }
        }
    }

    /// Records kept by an in-memory log; empty for file-backed logs.
    pub fn records(&self) -> Vec<LogRecord> {
        match &*self.sink.lock().unwrap_or_else(|e| e.into_inner()) {
            Sink::Memory(v) => v.clone(),
            Sink::File(_) => Vec::new(),
        }
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}
