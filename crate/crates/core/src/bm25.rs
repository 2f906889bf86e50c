//! In-memory inverted index with Okapi BM25 scoring.
//!
//! ```text
//! score(q, d) = Σ_{t ∈ q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·|d|/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Query tokens are summed with multiplicity. Documents with score 0 are never
//! returned.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::ranking::RankedList;
use crate::util;

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { lowercase: true }
    }
}

impl TokenizerConfig {
    /// Maximal runs of alphanumeric characters.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| {
                if self.lowercase {
                    t.to_lowercase()
                } else {
                    t.to_string()
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::InvalidConfig(format!("bm25 k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidConfig(format!("bm25 b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub version: u32,
    pub params: Bm25Params,
    pub tokenizer: TokenizerConfig,
    /// Always `"ln1p"`: idf = ln(1 + (N − df + 0.5)/(df + 0.5)).
    pub idf_form: String,
    pub corpus_digest: String,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl Bm25Index {
    pub fn build(corpus: &Corpus, tokenizer: TokenizerConfig, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        for (ordinal, doc) in corpus.iter().enumerate() {
            let tokens = tokenizer.tokenize(&doc.text);
            if tokens.is_empty() {
                tracing::warn!(doc_id = %doc.doc_id, "document has no tokens; indexed with length 0");
            }
            doc_lengths.push(tokens.len() as u32);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting {
                    doc: ordinal as u32,
                    tf,
                });
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        Ok(Self {
            version: INDEX_FORMAT_VERSION,
            params,
            tokenizer,
            idf_form: "ln1p".to_string(),
            corpus_digest: corpus.source_digest().to_string(),
            doc_ids: corpus.iter().map(|d| d.doc_id.clone()).collect(),
            doc_lengths,
            avg_doc_length,
            postings,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        self.idf_for_df(self.doc_freq(term))
    }

    pub fn idf_for_df(&self, df: usize) -> f64 {
        let n = self.doc_count() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Saturated term-frequency component for a document of `doc_len` tokens.
    pub fn tf_weight(&self, tf: f64, doc_len: f64) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let norm = if self.avg_doc_length > 0.0 {
            doc_len / self.avg_doc_length
        } else {
            0.0
        };
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        self.tokenizer.tokenize(text)
    }

    /// Top-`k` documents for `query`. An empty list is returned (with a
    /// warning) when the query has no tokens.
    pub fn retrieve(&self, query_id: &str, query: &str, k: usize) -> RankedList {
        let tokens = self.tokenize(query);
        if tokens.is_empty() {
            tracing::warn!(query_id, "query has no tokens; nothing retrieved");
            return RankedList::empty(query_id);
        }
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &tokens {
            let postings = self.postings(term);
            if postings.is_empty() {
                continue;
            }
            let idf = self.idf_for_df(postings.len());
            for p in postings {
                let w = idf * self.tf_weight(p.tf as f64, self.doc_lengths[p.doc as usize] as f64);
                *scores.entry(p.doc).or_insert(0.0) += w;
            }
        }
        let scored: Vec<(String, f64)> = scores
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(doc, s)| (self.doc_ids[doc as usize].clone(), s))
            .collect();
        let mut list = RankedList::from_scored(query_id, scored);
        list.truncate(k);
        list
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, &serde_json::to_vec(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let index: Self = util::read_json(path)?;
        if index.version != INDEX_FORMAT_VERSION {
            return Err(Error::parse(
                path,
                0,
                format!("unsupported index version {}", index.version),
            ));
        }
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::corpus::Document;

    fn toy() -> Corpus {
        Corpus::from_documents(vec![
            Document::new("a", "apple banana"),
            Document::new("b", "apple apple"),
            Document::new("c", "cherry"),
        ])
        .unwrap()
    }

    fn build(corpus: &Corpus) -> Bm25Index {
        Bm25Index::build(corpus, TokenizerConfig::default(), Bm25Params::default()).unwrap()
    }

    #[test]
    fn tokenizer_lowercases_alphanumeric_runs() {
        let t = TokenizerConfig::default();
        assert_eq!(t.tokenize("Hello, World! x2-y3"), ["hello", "world", "x2", "y3"]);
        assert!(t.tokenize("...  --").is_empty());
        let keep = TokenizerConfig { lowercase: false };
        assert_eq!(keep.tokenize("Hello"), ["Hello"]);
    }

    #[test]
    fn toy_statistics() {
        let index = build(&toy());
        assert_eq!(index.doc_count(), 3);
        assert!((index.avg_doc_length() - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(index.doc_freq("apple"), 2);
    }

    #[test]
    fn toy_apple_scores_match_direct_formula() {
        let index = build(&toy());
        let list = index.retrieve("q", "apple", 10);
        let ids: Vec<_> = list.doc_ids().collect();
        assert_eq!(ids, ["b", "a"]);

        // Hand evaluation with k1 = 0.9, b = 0.4, N = 3, df = 2, avgdl = 5/3.
        let idf = (1.0f64 + (3.0 - 2.0 + 0.5) / (2.0 + 0.5)).ln();
        let avgdl = 5.0 / 3.0;
        let score = |tf: f64, len: f64| {
            idf * tf * 1.9 / (tf + 0.9 * (1.0 - 0.4 + 0.4 * len / avgdl))
        };
        assert!((list.entries[0].score - score(2.0, 2.0)).abs() < 1e-12);
        assert!((list.entries[1].score - score(1.0, 2.0)).abs() < 1e-12);
    }

    #[test]
    fn absent_terms_and_small_k() {
        let index = build(&toy());
        assert!(index.retrieve("q", "durian", 10).is_empty());
        assert!(index.retrieve("q", "!!!", 10).is_empty());
        assert_eq!(index.retrieve("q", "apple cherry", 100).len(), 3);
        assert_eq!(index.retrieve("q", "apple cherry", 1).len(), 1);
    }

    #[test]
    fn tokenless_document_has_zero_length_and_no_postings() {
        let corpus = Corpus::from_documents(vec![
            Document::new("a", "apple"),
            Document::new("p", "?!"),
        ])
        .unwrap();
        let index = build(&corpus);
        assert_eq!(index.doc_lengths(), &[1, 0]);
        assert!(index.terms().all(|(_, ps)| ps.iter().all(|p| p.doc != 1)));
    }

    #[test]
    fn rejects_bad_params() {
        let corpus = toy();
        let bad_k1 = Bm25Params { k1: 0.0, b: 0.4 };
        assert!(Bm25Index::build(&corpus, TokenizerConfig::default(), bad_k1).is_err());
        let bad_b = Bm25Params { k1: 0.9, b: 1.5 };
        assert!(Bm25Index::build(&corpus, TokenizerConfig::default(), bad_b).is_err());
    }

    #[test]
    fn postings_sum_to_lengths_on_random_docs() {
        let mut rng = util::rng(11);
        let docs: Vec<Document> = (0..100)
            .map(|i| {
                let n = rng.random_range(0..30);
                let words: Vec<String> =
                    (0..n).map(|_| format!("w{}", rng.random_range(0..40))).collect();
                Document::new(format!("d{i}"), format!("x {}", words.join(" ")))
            })
            .collect();
        let corpus = Corpus::from_documents(docs).unwrap();
        let index = build(&corpus);
        let mut sums = vec![0u32; index.doc_count()];
        for (_, ps) in index.terms() {
            for p in ps {
                sums[p.doc as usize] += p.tf;
            }
        }
        // Recount independently of the index.
        let recount: Vec<u32> = corpus
            .iter()
            .map(|d| d.text.split_whitespace().count() as u32)
            .collect();
        assert_eq!(sums, index.doc_lengths());
        assert_eq!(sums, recount);
        let mean = recount.iter().map(|&l| l as f64).sum::<f64>() / 100.0;
        assert_eq!(index.avg_doc_length(), mean);
    }

    #[test]
    fn rebuild_and_persist_are_identical() {
        let corpus = toy();
        let a = build(&corpus);
        assert_eq!(a, build(&corpus));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        a.save(&path).unwrap();
        assert_eq!(Bm25Index::load(&path).unwrap(), a);
    }

    proptest! {
        #[test]
        fn extra_query_term_occurrence_never_lowers_score(
            docs in prop::collection::vec(prop::collection::vec(0u8..12, 1..15), 2..12),
            target in 0usize..12,
            term in 0u8..12,
        ) {
            let target = target % docs.len();
            let make = |extra: bool| {
                let d: Vec<Document> = docs.iter().enumerate().map(|(i, ws)| {
                    let mut words: Vec<String> = ws.iter().map(|w| format!("t{w}")).collect();
                    if extra && i == target {
                        words.push(format!("t{term}"));
                    }
                    Document::new(format!("d{i:02}"), words.join(" "))
                }).collect();
                build(&Corpus::from_documents(d).unwrap())
            };
            let query = format!("t{term}");
            let id = format!("d{target:02}");
            let score = |idx: &Bm25Index| {
                idx.retrieve("q", &query, usize::MAX)
                    .entries.iter().find(|e| e.doc_id == id).map_or(0.0, |e| e.score)
            };
            // Single-term query: df and N are unchanged when the term was
            // already present, and the longer document still scores higher.
            let before = score(&make(false));
            let after = score(&make(true));
            prop_assert!(after >= before - 1e-12, "{} < {}", after, before);
            prop_assert!(after > 0.0);
        }
    }
}
