//! Delegating training and reranking to an external program.
//!
//! The program is invoked as
//!
//! ```text
//! <program> [args...] --triplets <tsv> --queries <jsonl> --candidates <run> --out <run>
//! ```
//!
//! It trains on the triplet file, reranks the BM25 candidates of every query
//! in the queries file and writes the result as a TREC run to `--out`. Exit
//! status 0 means success. The process is killed when the timeout expires.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bm25::Bm25Index;
use crate::corpus::{write_queries, JudgmentSet};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::ranking::{read_run, write_run, RankedList};

const POLL_INTERVAL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalTrainer {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_timeout", with = "secs")]
    pub timeout: Duration,
}

fn default_timeout() -> Duration {
    Duration::from_secs(6 * 3600)
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

/// Files handed to the external program besides the triplets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalInputs {
    pub queries: PathBuf,
    pub candidates: PathBuf,
}

/// Writes the queries of `judgments` and their BM25 candidates into `dir`.
pub fn prepare_external_inputs(
    dir: &Path,
    judgments: &JudgmentSet,
    index: &Bm25Index,
    cfg: &EvalConfig,
) -> Result<ExternalInputs> {
    let queries = dir.join("queries.jsonl");
    let candidates = dir.join("candidates.run");
    write_queries(
        &queries,
        judgments.queries().iter().map(|(id, q)| (id.as_str(), q.text.as_str())),
    )?;
    let lists: Vec<RankedList> = judgments
        .queries()
        .iter()
        .map(|(id, q)| index.retrieve(id, &q.text, cfg.rerank_depth))
        .collect();
    write_run(&lists, "bm25", &candidates)?;
    Ok(ExternalInputs { queries, candidates })
}

impl ExternalTrainer {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            timeout: default_timeout(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Runs the program and parses the run file it wrote to `out`.
    pub fn run(&self, triplets: &Path, inputs: &ExternalInputs, out: &Path) -> Result<Vec<RankedList>> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg("--triplets")
            .arg(triplets)
            .arg("--queries")
            .arg(&inputs.queries)
            .arg("--candidates")
            .arg(&inputs.candidates)
            .arg("--out")
            .arg(out)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::External(format!("cannot start {}: {e}", self.program.display())))?;

        // Drain stderr concurrently so a chatty trainer cannot block on a full pipe.
        let stderr = child.stderr.take().map(|mut pipe| {
            std::thread::spawn(move || {
                let mut buf = String::new();
                let _ = pipe.read_to_string(&mut buf);
                buf
            })
        });
        let started = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if started.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(Error::ExternalTimeout(self.timeout));
                }
                Ok(None) => std::thread::sleep(POLL_INTERVAL),
                Err(e) => return Err(Error::External(format!("waiting for trainer: {e}"))),
            }
        };
        if !status.success() {
            let stderr = stderr.and_then(|h| h.join().ok()).unwrap_or_default();
            let lines: Vec<&str> = stderr.lines().collect();
            let tail = lines[lines.len().saturating_sub(5)..].join("\n");
            return Err(Error::External(format!("exited with {status}: {tail}")));
        }
        read_run(out)
    }
}
