//! Synthetic query generation, hard-negative mining and triplet assembly.
//!
//! Each sampled passage yields at most one query. Negatives for a query are
//! drawn uniformly from its BM25 ranks `window_lo..=window_hi` (21..=100 by
//! default) after removing the source passage. Triplets are stored in
//! contiguous groups of `m` rows that share the query and positive, which is
//! the layout the grouped softmax loss consumes.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bm25::Bm25Index;
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::lm::{
    parse_query, render_prompt, LanguageModel, LmRequest, LogRecord, ParseFlag, PromptTemplate,
    RequestLog,
};
use crate::util;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticQuery {
    pub text: String,
    pub source_doc_id: String,
    pub template_hash: String,
    pub parse_flag: ParseFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationOptions {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Maximum concurrent LM requests.
    pub jobs: usize,
    /// Trials whose drop rate exceeds this abort with a prompt-quality error.
    pub max_drop_rate: f64,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo".into(),
            temperature: 0.7,
            max_tokens: 256,
            jobs: 4,
            max_drop_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub attempted: usize,
    pub generated: usize,
    pub dropped: usize,
    pub fallback_parses: usize,
    pub drop_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryGeneration {
    pub queries: Vec<SyntheticQuery>,
    pub summary: GenerationSummary,
}

/// Generates one query per passage, preserving passage order.
///
/// LM calls run on up to `opts.jobs` threads; log records are written
/// afterwards in passage order so the log is order-deterministic.
pub fn generate_queries(
    template: &PromptTemplate,
    passages: &[Document],
    lm: &dyn LanguageModel,
    opts: &GenerationOptions,
    log: Option<&RequestLog>,
) -> Result<QueryGeneration> {
    if passages.is_empty() {
        return Err(Error::InvalidConfig("no passages to generate queries for".into()));
    }
    template.validate()?;
    let template_hash = template.hash();

    let call = |doc: &Document| {
        let request = LmRequest {
            model: opts.model.clone(),
            messages: render_prompt(template, &doc.text),
            temperature: opts.temperature,
            max_tokens: opts.max_tokens,
            seed: None,
        };
        let response = lm.complete(&request);
        (request, response)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outcomes: Vec<_> = pool.install(|| passages.par_iter().map(call).collect());

    let mut queries = Vec::with_capacity(passages.len());
    let mut dropped = 0;
    let mut fallback_parses = 0;
    for (doc, (request, response)) in passages.iter().zip(outcomes) {
        let mut record = LogRecord {
            timestamp: crate::lm::log_now(),
            kind: "query".into(),
            template_hash: template_hash.clone(),
            passage_id: Some(doc.doc_id.clone()),
            prompt: request.messages,
            completion: None,
            parse_status: "error".into(),
            attempts: 0,
            error: None,
        };
        let response = match response {
            Ok(r) => r,
            Err(e) => {
                record.error = Some(e.to_string());
                if let Some(log) = log {
                    log.append(record)?;
                }
                return Err(e.into());
            }
        };
        record.attempts = response.attempts.len();
        record.completion = Some(response.text.clone());
        match parse_query(template, &response.text) {
            Ok(parsed) => {
                record.parse_status = match parsed.flag {
                    ParseFlag::Parsed => "parsed",
                    ParseFlag::Fallback => "fallback",
                }
                .into();
                if parsed.flag == ParseFlag::Fallback {
                    fallback_parses += 1;
                }
                queries.push(SyntheticQuery {
                    text: parsed.text,
                    source_doc_id: doc.doc_id.clone(),
                    template_hash: template_hash.clone(),
                    parse_flag: parsed.flag,
                });
            }
            Err(e) => {
                record.parse_status = "empty".into();
                record.error = Some(e.to_string());
                dropped += 1;
            }
        }
        if let Some(log) = log {
            log.append(record)?;
        }
    }

    let attempted = passages.len();
    let drop_rate = dropped as f64 / attempted as f64;
    if drop_rate > opts.max_drop_rate {
        return Err(Error::PromptQuality { dropped, attempted });
    }
    Ok(QueryGeneration {
        summary: GenerationSummary {
            attempted,
            generated: queries.len(),
            dropped,
            fallback_parses,
            drop_rate,
        },
        queries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Extend past `window_hi` in rank order, then fill with random documents.
    #[default]
    ExtendThenRandom,
    /// Fail when the window holds fewer than `m` candidates.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiningConfig {
    /// Negatives per query (`m`).
    pub negatives: usize,
    /// First eligible BM25 rank, 1-based inclusive.
    pub window_lo: usize,
    /// Last eligible BM25 rank, inclusive.
    pub window_hi: usize,
    pub fallback: FallbackPolicy,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            negatives: 19,
            window_lo: 21,
            window_hi: 100,
            fallback: FallbackPolicy::ExtendThenRandom,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_lo == 0 || self.window_lo > self.window_hi {
            return Err(Error::InvalidConfig(format!(
                "mining window {}..={} is empty",
                self.window_lo, self.window_hi
            )));
        }
        if self.negatives == 0 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinedNegatives {
    pub doc_ids: Vec<String>,
    /// Negatives taken from ranks beyond `window_hi`.
    pub extended: usize,
    /// Negatives drawn uniformly from the corpus.
    pub random: usize,
}

impl MinedNegatives {
    pub fn used_fallback(&self) -> bool {
        self.extended + self.random > 0
    }
}

pub fn mine_negatives(
    index: &Bm25Index,
    query: &str,
    positive_doc_id: &str,
    cfg: &MiningConfig,
    seed: u64,
) -> Result<MinedNegatives> {
    cfg.validate()?;
    let m = cfg.negatives;
    if index.doc_count() < m + 1 {
        return Err(Error::CorpusTooSmall {
            needed: m + 1,
            available: index.doc_count(),
        });
    }
    let mut rng = util::rng(seed);
    let ranked = index.retrieve("", query, cfg.window_hi);
    let pool: Vec<&str> = ranked
        .doc_ids()
        .skip(cfg.window_lo - 1)
        .filter(|&d| d != positive_doc_id)
        .collect();
    if pool.len() >= m {
        let doc_ids = index::sample(&mut rng, pool.len(), m)
            .into_iter()
            .map(|i| pool[i].to_string())
            .collect();
        return Ok(MinedNegatives {
            doc_ids,
            extended: 0,
            random: 0,
        });
    }
    if cfg.fallback == FallbackPolicy::Strict {
        return Err(Error::InsufficientSample {
            requested: m,
            available: pool.len(),
        });
    }

    let mut chosen: Vec<String> = pool.iter().map(|d| d.to_string()).collect();
    let mut taken: HashSet<String> = chosen.iter().cloned().collect();
    taken.insert(positive_doc_id.to_string());

    let deep = index.retrieve("", query, index.doc_count());
    let mut extended = 0;
    for d in deep.doc_ids().skip(cfg.window_hi) {
        if chosen.len() == m {
            break;
        }
        if taken.insert(d.to_string()) {
            chosen.push(d.to_string());
            extended += 1;
        }
    }

    let mut random = 0;
    if chosen.len() < m {
        let rest: Vec<&String> = index.doc_ids().iter().filter(|d| !taken.contains(*d)).collect();
        let need = m - chosen.len();
        for i in index::sample(&mut rng, rest.len(), need) {
            chosen.push(rest[i].clone());
            random += 1;
        }
    }
    Ok(MinedNegatives {
        doc_ids: chosen,
        extended,
        random,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTriplet {
    pub query: String,
    pub positive_doc_id: String,
    pub negative_doc_id: String,
    pub group_index: usize,
}

/// A query with its positive and `m` negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletGroup<'a> {
    pub query: &'a str,
    pub positive_doc_id: &'a str,
    pub negatives: Vec<&'a str>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningStats {
    pub groups: usize,
    pub groups_with_fallback: usize,
    pub extended_negatives: usize,
    pub random_negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletSet {
    pub triplets: Vec<TrainingTriplet>,
    pub negatives_per_group: usize,
    pub stats: MiningStats,
}

pub struct QuerySeed<'a> {
    pub text: &'a str,
    pub positive_doc_id: &'a str,
}

impl<'a> From<&'a SyntheticQuery> for QuerySeed<'a> {
    fn from(q: &'a SyntheticQuery) -> Self {
        Self {
            text: &q.text,
            positive_doc_id: &q.source_doc_id,
        }
    }
}

/// Mines negatives for every query; group `i` uses a seed derived from
/// `(seed, i)` so groups are independent of each other's draws.
pub fn build_triplets<'a>(
    queries: impl IntoIterator<Item = QuerySeed<'a>>,
    index: &Bm25Index,
    cfg: &MiningConfig,
    seed: u64,
) -> Result<TripletSet> {
    let mut triplets = Vec::new();
    let mut stats = MiningStats::default();
    for (group, q) in queries.into_iter().enumerate() {
        let mined = mine_negatives(
            index,
            q.text,
            q.positive_doc_id,
            cfg,
            util::derive_seed(seed, "negatives", group as u64),
        )?;
        stats.groups += 1;
        if mined.used_fallback() {
            stats.groups_with_fallback += 1;
        }
        stats.extended_negatives += mined.extended;
        stats.random_negatives += mined.random;
        triplets.extend(mined.doc_ids.into_iter().map(|neg| TrainingTriplet {
            query: q.text.to_string(),
            positive_doc_id: q.positive_doc_id.to_string(),
            negative_doc_id: neg,
            group_index: group,
        }));
    }
    Ok(TripletSet {
        triplets,
        negatives_per_group: cfg.negatives,
        stats,
    })
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.triplets.len() / self.negatives_per_group.max(1)
    }

    pub fn groups(&self) -> impl Iterator<Item = TripletGroup<'_>> {
        self.triplets
            .chunks(self.negatives_per_group.max(1))
            .map(|rows| TripletGroup {
                query: &rows[0].query,
                positive_doc_id: &rows[0].positive_doc_id,
                negatives: rows.iter().map(|r| r.negative_doc_id.as_str()).collect(),
            })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("query_text\tpositive_doc_id\tnegative_doc_id\tgroup_index\n");
        for t in &self.triplets {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                sanitize(&t.query),
                t.positive_doc_id,
                t.negative_doc_id,
                t.group_index
            );
        }
        out
    }

    pub fn digest(&self) -> String {
        util::sha256_hex(self.to_tsv().as_bytes())
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, self.to_tsv().as_bytes())
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&raw, path)
    }

    /// Parses a triplet file and checks the contiguous equal-size grouping.
    pub fn parse_tsv(raw: &str, origin: &Path) -> Result<Self> {
        let mut triplets: Vec<TrainingTriplet> = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            if lineno == 0 && line.starts_with("query_text\t") {
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [query, pos, neg, group] = fields[..] else {
                return Err(Error::parse(
                    origin,
                    lineno + 1,
                    format!("expected 4 tab-separated fields, found {}", fields.len()),
                ));
            };
            let group_index: usize = group
                .parse()
                .map_err(|_| Error::parse(origin, lineno + 1, format!("bad group index {group:?}")))?;
            if pos == neg {
                return Err(Error::parse(origin, lineno + 1, "positive equals negative"));
            }
            triplets.push(TrainingTriplet {
                query: query.to_string(),
                positive_doc_id: pos.to_string(),
                negative_doc_id: neg.to_string(),
                group_index,
            });
        }
        if triplets.is_empty() {
            return Err(Error::EmptyTriplets);
        }
        let m = triplets
            .iter()
            .take_while(|t| t.group_index == triplets[0].group_index)
            .count();
        if !triplets.len().is_multiple_of(m) {
            return Err(Error::parse(origin, 0, "groups are not all the same size"));
        }
        for (g, rows) in triplets.chunks(m).enumerate() {
            let head = &rows[0];
            let consistent = rows.iter().all(|r| {
                r.group_index == head.group_index
                    && r.query == head.query
                    && r.positive_doc_id == head.positive_doc_id
            });
            if !consistent || (g > 0 && triplets[(g - 1) * m].group_index == head.group_index) {
                return Err(Error::parse(
                    origin,
                    g * m + 2,
                    format!("group {} is not a contiguous block of {m} rows", head.group_index),
                ));
            }
        }
        Ok(Self {
            triplets,
            negatives_per_group: m,
            stats: MiningStats::default(),
        })
    }
}

fn sanitize(text: &str) -> String {
    text.replace(['\t', '\n', '\r'], " ")
}
