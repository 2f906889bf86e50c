//! Graded NDCG@k and the average-NDCG validation metric.
//!
//! `DCG@k = Σ_{i≤k} g(relᵢ) / log2(i + 1)` with `g(r) = r` (linear, the
//! trec_eval `ndcg_cut` convention) or `g(r) = 2^r − 1`. The ideal DCG ranks
//! every judged document of the query, retrieved or not, so first-stage misses
//! lower the score. Unjudged documents have grade 0 and NDCG is 0 when the
//! ideal DCG is 0.
//!
//! Average NDCG retrieves the top `rerank_depth` BM25 candidates per judged
//! query, reorders them with a [`Reranker`] and averages NDCG@k over all
//! queries.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bm25::Bm25Index;
use crate::corpus::{Corpus, JudgmentSet};
use crate::error::{Error, Result};
use crate::ranking::RankedList;
use crate::reranker::{FeatureVector, QueryContext, RerankerModel, TermStats};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    #[default]
    Linear,
    Exponential,
}

impl Gain {
    pub fn apply(self, grade: f64) -> f64 {
        match self {
            Gain::Linear => grade,
            Gain::Exponential => grade.exp2() - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    pub rerank_depth: usize,
    pub gain: Gain,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            rerank_depth: 50,
            gain: Gain::Linear,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.rerank_depth {
            return Err(Error::InvalidConfig(format!(
                "cutoff k = {} must lie in 1..={} (rerank depth)",
                self.k, self.rerank_depth
            )));
        }
        Ok(())
    }
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

pub fn ideal_dcg<'a>(grades: impl IntoIterator<Item = &'a f64>, k: usize, gain: Gain) -> f64 {
    let mut sorted: Vec<f64> = grades.into_iter().copied().filter(|g| *g > 0.0).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| gain.apply(*g) / discount(i + 1))
        .sum()
}

/// NDCG@k of a ranked list of doc ids against one query's grades.
pub fn ndcg_at_k<'a>(
    ranking: impl IntoIterator<Item = &'a str>,
    grades: &HashMap<&str, f64>,
    k: usize,
    gain: Gain,
) -> f64 {
    let idcg = ideal_dcg(grades.values(), k, gain);
    if idcg <= 0.0 {
        return 0.0;
    }
    let dcg: f64 = ranking
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain.apply(grades.get(d).copied().unwrap_or(0.0)) / discount(i + 1))
        .sum();
    (dcg / idcg).clamp(0.0, 1.0)
}

/// Anything that can reorder a first-stage candidate list.
pub trait Reranker: Sync {
    fn rerank(&self, query_id: &str, query: &str, candidates: &RankedList) -> Result<RankedList>;

    fn describe(&self) -> String;
}

/// Keeps BM25 order.
pub struct Bm25Passthrough;

impl Reranker for Bm25Passthrough {
    fn rerank(&self, _: &str, _: &str, candidates: &RankedList) -> Result<RankedList> {
        Ok(candidates.clone())
    }

    fn describe(&self) -> String {
        "bm25".into()
    }
}

pub struct ModelReranker<'a> {
    pub model: &'a RerankerModel,
    pub index: &'a Bm25Index,
    pub corpus: &'a Corpus,
}

impl Reranker for ModelReranker<'_> {
    fn rerank(&self, _: &str, query: &str, candidates: &RankedList) -> Result<RankedList> {
        self.model.rerank(self.index, self.corpus, query, candidates)
    }

    fn describe(&self) -> String {
        format!("model:{}", &self.model.digest()[..16])
    }
}

/// Rankings read from a run file; queries absent from the run get an empty
/// list.
pub struct RunReranker {
    lists: HashMap<String, RankedList>,
    label: String,
}

impl RunReranker {
    pub fn new(lists: Vec<RankedList>, label: impl Into<String>) -> Self {
        Self {
            lists: lists.into_iter().map(|l| (l.query_id.clone(), l)).collect(),
            label: label.into(),
        }
    }
}

impl Reranker for RunReranker {
    fn rerank(&self, query_id: &str, _: &str, _: &RankedList) -> Result<RankedList> {
        Ok(self
            .lists
            .get(query_id)
            .cloned()
            .unwrap_or_else(|| RankedList::empty(query_id)))
    }

    fn describe(&self) -> String {
        format!("run:{}", self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub query_id: String,
    pub ndcg: f64,
    pub candidates: usize,
    /// Candidates with a positive grade.
    pub relevant_retrieved: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub reranker: String,
    pub judgments_digest: String,
    pub num_queries: usize,
    pub mean: f64,
    /// Queries where no positively graded document reached the candidates.
    pub zero_relevant_retrieved: usize,
    pub zero_candidates: usize,
    pub per_query: Vec<QueryEval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl EvalReport {
    fn assemble(
        config: EvalConfig,
        reranker: String,
        judgments_digest: String,
        mut per_query: Vec<QueryEval>,
    ) -> Self {
        per_query.sort_by(|a, b| a.query_id.cmp(&b.query_id));
        let n = per_query.len();
        let mean = if n == 0 {
            0.0
        } else {
            per_query.iter().map(|q| q.ndcg).sum::<f64>() / n as f64
        };
        Self {
            config,
            reranker,
            judgments_digest,
            num_queries: n,
            mean,
            zero_relevant_retrieved: per_query.iter().filter(|q| q.relevant_retrieved == 0).count(),
            zero_candidates: per_query.iter().filter(|q| q.candidates == 0).count(),
            per_query,
            provenance: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_json(path, self)
    }
}

fn query_eval(
    query_id: &str,
    ranking: &RankedList,
    candidates: usize,
    grades: &HashMap<&str, f64>,
    cfg: &EvalConfig,
) -> QueryEval {
    let relevant_retrieved = ranking
        .doc_ids()
        .filter(|d| grades.get(d).is_some_and(|g| *g > 0.0))
        .count();
    QueryEval {
        query_id: query_id.to_string(),
        ndcg: ndcg_at_k(ranking.doc_ids(), grades, cfg.k, cfg.gain),
        candidates,
        relevant_retrieved,
        flag: (candidates == 0).then(|| "no candidates retrieved".to_string()),
    }
}

/// Mean NDCG@k of `reranker` over every judged query.
pub fn avg_ndcg(
    reranker: &dyn Reranker,
    judgments: &JudgmentSet,
    index: &Bm25Index,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let per_query = judgments
        .queries()
        .par_iter()
        .map(|(qid, q)| {
            let grades = q.grade_map();
            let candidates = index.retrieve(qid, &q.text, cfg.rerank_depth);
            if candidates.is_empty() {
                return Ok(query_eval(qid, &candidates, 0, &grades, cfg));
            }
            let ranked = reranker.rerank(qid, &q.text, &candidates)?;
            Ok(query_eval(qid, &ranked, candidates.len(), &grades, cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::assemble(
        *cfg,
        reranker.describe(),
        judgments.digest(),
        per_query,
    ))
}

struct PreparedQuery {
    query_id: String,
    grades: Vec<(String, f64)>,
    doc_ids: Vec<String>,
    features: Vec<FeatureVector>,
}

/// Validation set with candidates and features computed once, for repeated
/// evaluation of model checkpoints during training. Results equal
/// [`avg_ndcg`] with a [`ModelReranker`].
pub struct PreparedEval {
    cfg: EvalConfig,
    judgments_digest: String,
    queries: Vec<PreparedQuery>,
}

impl PreparedEval {
    pub fn new(judgments: &JudgmentSet, corpus: &Corpus, index: &Bm25Index, cfg: EvalConfig) -> Result<Self> {
        cfg.validate()?;
        if judgments.is_empty() {
            return Err(Error::InvalidConfig("validation judgments are empty".into()));
        }
        let queries = judgments
            .queries()
            .iter()
            .map(|(qid, q)| {
                let candidates = index.retrieve(qid, &q.text, cfg.rerank_depth);
                let ctx = QueryContext::new(index, &q.text);
                let features = candidates
                    .doc_ids()
                    .map(|d| {
                        let doc = corpus.get(d).ok_or_else(|| Error::UnknownDocId {
                            doc_id: d.to_string(),
                            context: "validation candidates".into(),
                        })?;
                        Ok(ctx.features(index, &TermStats::new(index, &doc.text)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PreparedQuery {
                    query_id: qid.clone(),
                    grades: q.grades.clone(),
                    doc_ids: candidates.doc_ids().map(str::to_string).collect(),
                    features,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            judgments_digest: judgments.digest(),
            queries,
        })
    }

    pub fn config(&self) -> &EvalConfig {
        &self.cfg
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn evaluate(&self, model: &RerankerModel) -> EvalReport {
        let per_query = self
            .queries
            .iter()
            .map(|q| {
                let scored = q
                    .doc_ids
                    .iter()
                    .zip(&q.features)
                    .map(|(d, x)| (d.clone(), model.score_features(x)))
                    .collect();
                let ranked = RankedList::from_scored(q.query_id.clone(), scored);
                let grades = q.grades.iter().map(|(d, g)| (d.as_str(), *g)).collect();
                query_eval(&q.query_id, &ranked, q.doc_ids.len(), &grades, &self.cfg)
            })
            .collect();
        EvalReport::assemble(
            self.cfg,
            format!("model:{}", &model.digest()[..16]),
            self.judgments_digest.clone(),
            per_query,
        )
    }

    pub fn mean_ndcg(&self, model: &RerankerModel) -> f64 {
        self.evaluate(model).mean
    }
}
