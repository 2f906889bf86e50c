//! Document corpus and relevance judgments.
//!
//! Corpora are JSONL files with one `{"doc_id": ..., "text": ...}` object per
//! line. Judgments are TREC qrels (`query_id 0 doc_id grade`) plus a JSONL
//! sidecar mapping `query_id` to query text. Both are immutable once loaded.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Jsonl,
}

/// Ordered, id-unique passage collection.
///
/// Order is the input order, so `source_digest` changes when a file is
/// reordered even though the document set is the same.
#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    positions: HashMap<String, usize>,
    source_digest: String,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.documents == other.documents
    }
}

impl Corpus {
    /// Builds a corpus from in-memory documents; the digest is taken over the
    /// canonical JSONL serialization.
    pub fn from_documents(documents: Vec<Document>) -> Result<Self> {
        let bytes = to_jsonl(&documents)?;
        Self::build(documents, util::sha256_hex(&bytes))
    }

    fn build(documents: Vec<Document>, source_digest: String) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut positions = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc.text.trim().is_empty() {
                return Err(Error::EmptyDocument(doc.doc_id.clone()));
            }
            if positions.insert(doc.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateDocId(doc.doc_id.clone()));
            }
        }
        Ok(Self {
            documents,
            positions,
            source_digest,
        })
    }

    pub fn parse_jsonl(bytes: &[u8], origin: &Path) -> Result<Self> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| Error::parse(origin, 0, format!("invalid UTF-8: {e}")))?;
        let mut documents = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(line)
                .map_err(|e| Error::parse(origin, lineno + 1, e.to_string()))?;
            documents.push(doc);
        }
        Self::build(documents, util::sha256_hex(bytes))
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.positions.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.positions.get(doc_id).copied()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.positions.contains_key(doc_id)
    }

    /// SHA-256 (hex) of the raw input bytes.
    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        to_jsonl(&self.documents)
    }
}

fn to_jsonl(documents: &[Document]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for doc in documents {
        serde_json::to_writer(&mut out, doc)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        CorpusFormat::Jsonl => Corpus::parse_jsonl(&bytes, path),
    }
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    util::write_atomic(path, &corpus.to_jsonl()?)
}

/// One line of a qrels file joined with its query text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub query_id: String,
    pub query_text: String,
    pub doc_id: String,
    pub grade: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryJudgments {
    pub text: String,
    /// Judged documents in file order.
    pub grades: Vec<(String, f64)>,
}

impl QueryJudgments {
    pub fn grade_map(&self) -> HashMap<&str, f64> {
        self.grades.iter().map(|(d, g)| (d.as_str(), *g)).collect()
    }
}

/// Judgments grouped by query id.
///
/// Every judgment is kept for NDCG ideal-gain computation; only those with
/// `grade >= positive_floor` form the positive pool used to seed queries and
/// training pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentSet {
    queries: BTreeMap<String, QueryJudgments>,
    positive_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JudgmentOptions {
    pub positive_floor: f64,
    pub max_grade: f64,
}

impl Default for JudgmentOptions {
    fn default() -> Self {
        Self {
            positive_floor: 1.0,
            max_grade: 3.0,
        }
    }
}

impl JudgmentSet {
    pub fn from_judgments(
        judgments: impl IntoIterator<Item = RelevanceJudgment>,
        positive_floor: f64,
    ) -> Self {
        let mut queries: BTreeMap<String, QueryJudgments> = BTreeMap::new();
        for j in judgments {
            queries
                .entry(j.query_id)
                .or_insert_with(|| QueryJudgments {
                    text: j.query_text,
                    grades: Vec::new(),
                })
                .grades
                .push((j.doc_id, j.grade));
        }
        Self {
            queries,
            positive_floor,
        }
    }

    pub fn positive_floor(&self) -> f64 {
        self.positive_floor
    }

    pub fn queries(&self) -> &BTreeMap<String, QueryJudgments> {
        &self.queries
    }

    pub fn query(&self, query_id: &str) -> Option<&QueryJudgments> {
        self.queries.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    /// Total number of judgments, positive or not.
    pub fn len(&self) -> usize {
        self.queries.values().map(|q| q.grades.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn judgments(&self) -> impl Iterator<Item = RelevanceJudgment> + '_ {
        self.queries.iter().flat_map(|(qid, q)| {
            q.grades.iter().map(move |(doc, grade)| RelevanceJudgment {
                query_id: qid.clone(),
                query_text: q.text.clone(),
                doc_id: doc.clone(),
                grade: *grade,
            })
        })
    }

    pub fn positive_pool(&self) -> Vec<RelevanceJudgment> {
        self.judgments()
            .filter(|j| j.grade >= self.positive_floor)
            .collect()
    }

    /// Query ids with at least one judgment at or above the floor.
    pub fn positive_query_ids(&self) -> Vec<&str> {
        self.queries
            .iter()
            .filter(|(_, q)| q.grades.iter().any(|(_, g)| *g >= self.positive_floor))
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn restrict_to<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Self {
        let queries = ids
            .into_iter()
            .filter_map(|id| self.queries.get(id).map(|q| (id.to_string(), q.clone())))
            .collect();
        Self {
            queries,
            positive_floor: self.positive_floor,
        }
    }

    pub fn shared_queries(&self, other: &JudgmentSet) -> Vec<String> {
        self.queries
            .keys()
            .filter(|k| other.queries.contains_key(*k))
            .cloned()
            .collect()
    }

    pub fn digest(&self) -> String {
        util::sha256_hex(&serde_json::to_vec(self).unwrap_or_default())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryLine {
    query_id: String,
    text: String,
}

pub fn load_queries(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: QueryLine =
            serde_json::from_str(line).map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
        if out.insert(q.query_id.clone(), q.text).is_some() {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("duplicate query_id {:?}", q.query_id),
            ));
        }
    }
    Ok(out)
}

pub fn write_queries<'a>(
    path: &Path,
    queries: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> Result<()> {
    let mut out = Vec::new();
    for (query_id, text) in queries {
        serde_json::to_writer(
            &mut out,
            &serde_json::json!({ "query_id": query_id, "text": text }),
        )?;
        out.push(b'\n');
    }
    util::write_atomic(path, &out)
}

pub fn load_judgments(
    qrels: &Path,
    queries: &Path,
    corpus: &Corpus,
    opts: JudgmentOptions,
) -> Result<JudgmentSet> {
    let texts = load_queries(queries)?;
    let raw = fs::read_to_string(qrels).map_err(|e| Error::io(qrels, e))?;
    parse_qrels(&raw, qrels, &texts, corpus, opts)
}

pub fn parse_qrels(
    raw: &str,
    origin: &Path,
    texts: &BTreeMap<String, String>,
    corpus: &Corpus,
    opts: JudgmentOptions,
) -> Result<JudgmentSet> {
    let mut judgments = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in raw.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let line_no = lineno + 1;
        let [query_id, _iteration, doc_id, grade] = fields[..] else {
            return Err(Error::parse(
                origin,
                line_no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        };
        let grade: f64 = grade
            .parse()
            .map_err(|_| Error::parse(origin, line_no, format!("bad grade {grade:?}")))?;
        if !grade.is_finite() || grade < 0.0 || grade > opts.max_grade {
            return Err(Error::parse(
                origin,
                line_no,
                format!("grade {grade} outside [0, {}]", opts.max_grade),
            ));
        }
        if !corpus.contains(doc_id) {
            return Err(Error::UnknownDocId {
                doc_id: doc_id.to_string(),
                context: format!("{}:{line_no}", origin.display()),
            });
        }
        let text = texts
            .get(query_id)
            .ok_or_else(|| Error::MissingQueryText(query_id.to_string()))?;
        if !seen.insert((query_id.to_string(), doc_id.to_string())) {
            return Err(Error::parse(
                origin,
                line_no,
                format!("duplicate judgment for ({query_id}, {doc_id})"),
            ));
        }
        judgments.push(RelevanceJudgment {
            query_id: query_id.to_string(),
            query_text: text.clone(),
            doc_id: doc_id.to_string(),
            grade,
        });
    }
    Ok(JudgmentSet::from_judgments(judgments, opts.positive_floor))
}

/// Samples `n` distinct positive queries uniformly without replacement,
/// keeping every judgment of each chosen query.
pub fn sample_judgments(set: &JudgmentSet, n: usize, seed: u64) -> Result<JudgmentSet> {
    let candidates = set.positive_query_ids();
    if n > candidates.len() {
        return Err(Error::InsufficientSample {
            requested: n,
            available: candidates.len(),
        });
    }
    let mut rng = util::rng(seed);
    let chosen = index::sample(&mut rng, candidates.len(), n);
    Ok(set.restrict_to(chosen.into_iter().map(|i| candidates[i])))
}

/// Draws `min(size, |corpus|)` distinct documents uniformly without
/// replacement, in sampled order.
pub fn sample_documents(corpus: &Corpus, size: usize, seed: u64) -> Vec<Document> {
    let amount = size.min(corpus.len());
    let mut rng = util::rng(seed);
    index::sample(&mut rng, corpus.len(), amount)
        .into_iter()
        .map(|i| corpus.documents()[i].clone())
        .collect()
}

/// Reproducibility record for a document sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub seed: u64,
    pub requested: usize,
    pub corpus_digest: String,
    pub doc_ids: Vec<String>,
}

impl SampleManifest {
    pub fn new(corpus: &Corpus, requested: usize, seed: u64, sample: &[Document]) -> Self {
        Self {
            seed,
            requested,
            corpus_digest: corpus.source_digest().to_string(),
            doc_ids: sample.iter().map(|d| d.doc_id.clone()).collect(),
        }
    }
}
