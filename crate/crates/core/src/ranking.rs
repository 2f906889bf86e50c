//! Ranked candidate lists and TREC run files.
//!
//! Run lines are `query_id Q0 doc_id rank score run_tag`, with scores printed
//! to 6 decimal places and ranks starting at 1.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Candidates for one query, by descending score with ties on ascending
/// `doc_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn empty(query_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            entries: Vec::new(),
        }
    }

    /// Sorts arbitrary scored documents into ranking order.
    pub fn from_scored(query_id: impl Into<String>, mut scored: Vec<(String, f64)>) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self {
            query_id: query_id.into(),
            entries: scored
                .into_iter()
                .map(|(doc_id, score)| RankedEntry { doc_id, score })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }

    /// 1-based rank of a document, if present.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.doc_id == doc_id).map(|i| i + 1)
    }

    /// Checks ordering, tie-break and uniqueness.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = HashSet::new();
        self.entries.iter().all(|e| seen.insert(e.doc_id.as_str()))
            && self.entries.windows(2).all(|w| {
                w[0].score > w[1].score || (w[0].score == w[1].score && w[0].doc_id < w[1].doc_id)
            })
    }
}

pub fn format_run(lists: &[RankedList], run_tag: &str) -> String {
    let mut out = String::new();
    for list in lists {
        for (i, e) in list.entries.iter().enumerate() {
            let _ = writeln!(
                out,
                "{} Q0 {} {} {:.6} {}",
                list.query_id,
                e.doc_id,
                i + 1,
                e.score,
                run_tag
            );
        }
    }
    out
}

pub fn write_run(lists: &[RankedList], run_tag: &str, path: &Path) -> Result<()> {
    util::write_atomic(path, format_run(lists, run_tag).as_bytes())
}

pub fn read_run(path: &Path) -> Result<Vec<RankedList>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run(&raw, path)
}

/// Parses a run, keeping queries in order of first appearance.
///
/// Within a query, lines must appear with consecutive ranks from 1 and
/// non-increasing scores.
pub fn parse_run(raw: &str, origin: &Path) -> Result<Vec<RankedList>> {
    let mut lists: Vec<RankedList> = Vec::new();
    let mut finished: HashSet<String> = HashSet::new();
    for (lineno, line) in raw.lines().enumerate() {
        let line_no = lineno + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [query_id, _q0, doc_id, rank, score, _tag] = fields[..] else {
            return Err(Error::parse(
                origin,
                line_no,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        };
        let rank: usize = rank
            .parse()
            .map_err(|_| Error::parse(origin, line_no, format!("bad rank {rank:?}")))?;
        let score: f64 = score
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| Error::parse(origin, line_no, format!("bad score {score:?}")))?;

        let continuing = lists.last().is_some_and(|l| l.query_id == query_id);
        if !continuing {
            if let Some(prev) = lists.last() {
                finished.insert(prev.query_id.clone());
            }
            if finished.contains(query_id) {
                return Err(Error::parse(
                    origin,
                    line_no,
                    format!("query {query_id:?} lines are not contiguous"),
                ));
            }
            lists.push(RankedList::empty(query_id));
        }
        let list = lists.last_mut().expect("pushed above");
        if rank != list.entries.len() + 1 {
            return Err(Error::parse(
                origin,
                line_no,
                format!("rank {rank} out of sequence (expected {})", list.entries.len() + 1),
            ));
        }
        if let Some(prev) = list.entries.last() {
            if score > prev.score {
                return Err(Error::parse(
                    origin,
                    line_no,
                    format!("score {score} exceeds score at rank {}", rank - 1),
                ));
            }
        }
        if list.entries.iter().any(|e| e.doc_id == doc_id) {
            return Err(Error::parse(
                origin,
                line_no,
                format!("duplicate doc {doc_id:?} for query {query_id:?}"),
            ));
        }
        list.entries.push(RankedEntry {
            doc_id: doc_id.to_string(),
            score,
        });
    }
    Ok(lists)
}
