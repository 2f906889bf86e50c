//! Fixed-order (query, document) features.
//!
//! | # | name            | value                                                        |
//! |---|-----------------|--------------------------------------------------------------|
//! | 0 | `bm25`          | BM25 score of the document for the query                     |
//! | 1 | `tfidf_cosine`  | cosine of tf·idf vectors, idf as in the BM25 index           |
//! | 2 | `query_coverage`| distinct query tokens present in the document / distinct query tokens |
//! | 3 | `doc_coverage`  | distinct document tokens present in the query / distinct document tokens |
//! | 4 | `length_ratio`  | query token count / document token count (0 for empty documents) |
//! | 5 | `log_doc_length`| ln(1 + document token count)                                 |
//!
//! Every feature is 0 when either side has no tokens, except `log_doc_length`
//! which depends on the document alone.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::bm25::Bm25Index;

pub const NUM_FEATURES: usize = 6;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "bm25",
    "tfidf_cosine",
    "query_coverage",
    "doc_coverage",
    "length_ratio",
    "log_doc_length",
];

pub const BM25_FEATURE: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Token statistics for one side of a pair.
#[derive(Debug, Clone, Default)]
pub struct TermStats {
    tokens: Vec<String>,
    counts: BTreeMap<String, u32>,
}

impl TermStats {
    pub fn new(index: &Bm25Index, text: &str) -> Self {
        let tokens = index.tokenize(text);
        let mut counts = BTreeMap::new();
        for t in &tokens {
            *counts.entry(t.clone()).or_insert(0) += 1;
        }
        Self { tokens, counts }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn tfidf_norm(&self, index: &Bm25Index) -> f64 {
        self.counts
            .iter()
            .map(|(t, &c)| (c as f64 * index.idf(t)).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Query-side statistics computed once and reused across candidates.
#[derive(Debug, Clone)]
pub struct QueryContext {
    stats: TermStats,
    idf: HashMap<String, f64>,
    norm: f64,
}

impl QueryContext {
    pub fn new(index: &Bm25Index, query: &str) -> Self {
        let stats = TermStats::new(index, query);
        let idf = stats
            .counts
            .keys()
            .map(|t| (t.clone(), index.idf(t)))
            .collect();
        let norm = stats.tfidf_norm(index);
        Self { stats, idf, norm }
    }

    pub fn features(&self, index: &Bm25Index, doc: &TermStats) -> FeatureVector {
        let q = &self.stats;
        let dlen = doc.len() as f64;
        // Same summation order as `Bm25Index::retrieve`, so the BM25 feature
        // is bit-identical to the retrieval score.
        let mut bm25 = 0.0;
        for term in &q.tokens {
            if let Some(&dtf) = doc.counts.get(term) {
                bm25 += self.idf[term] * index.tf_weight(dtf as f64, dlen);
            }
        }
        let mut dot = 0.0;
        let mut shared = 0usize;
        for (term, &qtf) in &q.counts {
            let Some(&dtf) = doc.counts.get(term) else {
                continue;
            };
            let idf = self.idf[term];
            dot += (qtf as f64 * idf) * (dtf as f64 * idf);
            shared += 1;
        }
        let doc_norm = if shared > 0 { doc.tfidf_norm(index) } else { 0.0 };
        let cosine = if self.norm > 0.0 && doc_norm > 0.0 {
            dot / (self.norm * doc_norm)
        } else {
            0.0
        };
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        FeatureVector([
            bm25,
            cosine,
            ratio(shared, q.counts.len()),
            ratio(shared, doc.counts.len()),
            ratio(q.len(), doc.len()),
            (1.0 + dlen).ln(),
        ])
    }
}

pub fn extract_features(index: &Bm25Index, query: &str, doc_text: &str) -> FeatureVector {
    QueryContext::new(index, query).features(index, &TermStats::new(index, doc_text))
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::bm25::{Bm25Params, TokenizerConfig};
    use crate::corpus::{Corpus, Document};
    use crate::util;

    fn toy() -> (Corpus, Bm25Index) {
        let texts = [
            "the quick brown fox",
            "the lazy dog sleeps",
            "quick quick fox jumps over the dog",
            "a bird in the hand",
            "brown bread and butter",
        ];
        let docs = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), *t))
            .collect();
        let corpus = Corpus::from_documents(docs).unwrap();
        let index = Bm25Index::build(&corpus, TokenizerConfig::default(), Bm25Params::default()).unwrap();
        (corpus, index)
    }

    #[test]
    fn identical_text_has_full_coverage() {
        let (corpus, index) = toy();
        let text = &corpus.documents()[2].text;
        let f = extract_features(&index, text, text);
        assert_eq!(f.0[2], 1.0);
        assert_eq!(f.0[3], 1.0);
        assert_eq!(f.0[4], 1.0);
        assert!((f.0[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_tokens_zero_out_overlap_features() {
        let (_, index) = toy();
        let f = extract_features(&index, "zebra", "the lazy dog sleeps");
        assert_eq!(&f.0[..4], &[0.0; 4]);
        assert_eq!(f.0[4], 0.25);
        assert!((f.0[5] - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_sides() {
        let (_, index) = toy();
        let f = extract_features(&index, "", "the dog");
        assert_eq!(&f.0[..5], &[0.0; 5]);
        let f = extract_features(&index, "dog", "?!");
        assert_eq!(f.0, [0.0; 6]);
    }

    #[test]
    fn bm25_feature_matches_retrieval_score() {
        let (corpus, index) = toy();
        let ranked = index.retrieve("q", "quick dog the", 10);
        for e in &ranked.entries {
            let f = extract_features(&index, "quick dog the", &corpus.get(&e.doc_id).unwrap().text);
            assert_eq!(f.0[BM25_FEATURE].to_bits(), e.score.to_bits());
        }
    }

    #[test]
    fn cosine_matches_dense_recomputation() {
        let (_, index) = toy();
        let vocab = ["the", "quick", "brown", "fox", "dog", "lazy", "bird", "bread", "zebra"];
        let mut rng = util::rng(11);
        for _ in 0..50 {
            let mut draw = || {
                let n = rng.random_range(1..7);
                (0..n)
                    .map(|_| vocab[rng.random_range(0..vocab.len())])
                    .collect::<Vec<_>>()
            };
            let (q, d) = (draw(), draw());
            let dense = |words: &[&str]| {
                vocab
                    .iter()
                    .map(|v| words.iter().filter(|w| *w == v).count() as f64 * index.idf(v))
                    .collect::<Vec<_>>()
            };
            let (qv, dv) = (dense(&q), dense(&d));
            let dot: f64 = qv.iter().zip(&dv).map(|(a, b)| a * b).sum();
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let expected = dot / (norm(&qv) * norm(&dv));
            let got = extract_features(&index, &q.join(" "), &d.join(" ")).0[1];
            assert!((got - expected).abs() < 1e-12, "{q:?} {d:?}: {got} vs {expected}");
        }
    }
}
