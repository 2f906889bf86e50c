//! Feature-based pointwise scorer and its checkpoint format.
//!
//! Two architectures share a flat parameter vector:
//!
//! * `Linear`: `s(x) = w·x` (6 parameters, zero-initialised).
//! * `Mlp { hidden }`: `s(x) = Σⱼ v_j · tanh(W_j·x + b_j)` with `W` stored
//!   row-major, then `b`, then `v`. `W` and `b` start uniform in (−0.1, 0.1),
//!   `v` starts at zero so the initial model scores every pair 0.
//!
//! There is no output bias: the loss and every ranking are invariant to it.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{
    FeatureVector, QueryContext, TermStats, BM25_FEATURE, FEATURE_NAMES, NUM_FEATURES,
};
use crate::bm25::Bm25Index;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::ranking::RankedList;
use crate::util;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    #[default]
    Linear,
    Mlp { hidden: usize },
}

impl Architecture {
    pub fn num_params(&self) -> usize {
        match *self {
            Architecture::Linear => NUM_FEATURES,
            Architecture::Mlp { hidden } => hidden * (NUM_FEATURES + 2),
        }
    }
}

/// Validation measurement taken during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    /// Optimizer steps completed when the measurement was taken.
    pub step: usize,
    /// Fractional epoch at `step`.
    pub epoch: f64,
    pub score: f64,
    /// Last step of training.
    pub is_final: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    /// Optimizer steps taken by the run that produced this checkpoint.
    pub steps: usize,
    pub warmup_steps: usize,
    /// Step whose parameters this checkpoint holds.
    pub checkpoint_step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_validation: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub validation_curve: Vec<ValidationPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triplet_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankerModel {
    pub format_version: u32,
    pub architecture: Architecture,
    pub features: Vec<String>,
    pub params: Vec<f64>,
    #[serde(default)]
    pub metadata: TrainingMetadata,
}

impl RerankerModel {
    /// Initial model for `architecture`; `seed` only matters for hidden layers.
    pub fn init(architecture: Architecture, seed: u64) -> Result<Self> {
        let mut params = vec![0.0; architecture.num_params()];
        if let Architecture::Mlp { hidden } = architecture {
            if hidden == 0 {
                return Err(Error::InvalidConfig("hidden width must be positive".into()));
            }
            let mut rng = util::rng(seed);
            for p in &mut params[..hidden * (NUM_FEATURES + 1)] {
                *p = rng.random_range(-0.1..0.1);
            }
        }
        Self::from_params(architecture, params)
    }

    pub fn linear() -> Self {
        Self::init(Architecture::Linear, 0).expect("linear init is infallible")
    }

    /// Linear model with weight 1 on the BM25 feature, reproducing BM25 order.
    pub fn bm25_projection() -> Self {
        let mut model = Self::linear();
        model.params[BM25_FEATURE] = 1.0;
        model
    }

    pub fn from_params(architecture: Architecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != architecture.num_params() {
            return Err(Error::InvalidConfig(format!(
                "{architecture:?} needs {} parameters, got {}",
                architecture.num_params(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameter".into()));
        }
        Ok(Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            architecture,
            features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            params,
            metadata: TrainingMetadata::default(),
        })
    }

    pub fn score_features(&self, x: &FeatureVector) -> f64 {
        let x = &x.0;
        match self.architecture {
            Architecture::Linear => dot(&self.params, x),
            Architecture::Mlp { hidden } => {
                let (w, rest) = self.params.split_at(hidden * NUM_FEATURES);
                let (b, v) = rest.split_at(hidden);
                (0..hidden)
                    .map(|j| v[j] * (dot(&w[j * NUM_FEATURES..(j + 1) * NUM_FEATURES], x) + b[j]).tanh())
                    .sum()
            }
        }
    }

    /// Adds `coef · ∂s(x)/∂θ` to `grad`.
    pub fn accumulate_gradient(&self, x: &FeatureVector, coef: f64, grad: &mut [f64]) {
        let x = &x.0;
        match self.architecture {
            Architecture::Linear => {
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += coef * xi;
                }
            }
            Architecture::Mlp { hidden } => {
                let (w, rest) = self.params.split_at(hidden * NUM_FEATURES);
                let (b, v) = rest.split_at(hidden);
                let (gw, grest) = grad.split_at_mut(hidden * NUM_FEATURES);
                let (gb, gv) = grest.split_at_mut(hidden);
                for j in 0..hidden {
                    let row = j * NUM_FEATURES..(j + 1) * NUM_FEATURES;
                    let h = (dot(&w[row.clone()], x) + b[j]).tanh();
                    gv[j] += coef * h;
                    let back = coef * v[j] * (1.0 - h * h);
                    gb[j] += back;
                    for (g, xi) in gw[row].iter_mut().zip(x) {
                        *g += back * xi;
                    }
                }
            }
        }
    }

    pub fn score(&self, index: &Bm25Index, query: &str, doc_text: &str) -> f64 {
        let ctx = QueryContext::new(index, query);
        self.score_features(&ctx.features(index, &TermStats::new(index, doc_text)))
    }

    /// Reorders `candidates` by model score, ties broken by ascending doc_id.
    pub fn rerank(
        &self,
        index: &Bm25Index,
        corpus: &Corpus,
        query: &str,
        candidates: &RankedList,
    ) -> Result<RankedList> {
        let ctx = QueryContext::new(index, query);
        let scored = candidates
            .entries
            .iter()
            .map(|e| {
                let doc = corpus.get(&e.doc_id).ok_or_else(|| Error::UnknownDocId {
                    doc_id: e.doc_id.clone(),
                    context: "rerank candidates".into(),
                })?;
                let x = ctx.features(index, &TermStats::new(index, &doc.text));
                Ok((e.doc_id.clone(), self.score_features(&x)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RankedList::from_scored(candidates.query_id.clone(), scored))
    }

    pub fn digest(&self) -> String {
        util::sha256_hex(&serde_json::to_vec(self).unwrap_or_default())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = util::read_json(path)?;
        if model.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::parse(
                path,
                0,
                format!("unsupported checkpoint version {}", model.format_version),
            ));
        }
        if model.features != FEATURE_NAMES {
            return Err(Error::parse(path, 0, "checkpoint feature list does not match"));
        }
        Self::from_params(model.architecture, model.params.clone())
            .map_err(|e| Error::parse(path, 0, e.to_string()))?;
        Ok(model)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bm25::{Bm25Params, TokenizerConfig};
    use crate::corpus::Document;

    fn toy() -> (Corpus, Bm25Index) {
        let docs = (0..30)
            .map(|i| {
                let words: Vec<String> = (0..(3 + i % 7)).map(|j| format!("w{}", (i * 7 + j * 3) % 23)).collect();
                Document::new(format!("d{i:02}"), words.join(" "))
            })
            .collect();
        let corpus = Corpus::from_documents(docs).unwrap();
        let index = Bm25Index::build(&corpus, TokenizerConfig::default(), Bm25Params::default()).unwrap();
        (corpus, index)
    }

    #[test]
    fn zero_model_scores_zero() {
        let (_, index) = toy();
        let m = RerankerModel::linear();
        assert_eq!(m.score(&index, "w1 w2", "w1 w3"), 0.0);
        let mlp = RerankerModel::init(Architecture::Mlp { hidden: 4 }, 3).unwrap();
        assert_eq!(mlp.score(&index, "w1 w2", "w1 w3"), 0.0);
    }

    #[test]
    fn projection_equals_bm25_and_keeps_order() {
        let (corpus, index) = toy();
        let m = RerankerModel::bm25_projection();
        let cands = index.retrieve("q", "w1 w4 w9", 50);
        for e in &cands.entries {
            let s = m.score(&index, "w1 w4 w9", &corpus.get(&e.doc_id).unwrap().text);
            assert!((s - e.score).abs() < 1e-12);
        }
        let out = m.rerank(&index, &corpus, "w1 w4 w9", &cands).unwrap();
        assert_eq!(out.doc_ids().collect::<Vec<_>>(), cands.doc_ids().collect::<Vec<_>>());
    }

    #[test]
    fn rerank_ignores_input_order() {
        let (corpus, index) = toy();
        let m = RerankerModel::from_params(Architecture::Linear, vec![0.3, -1.0, 2.0, 0.5, -0.1, 0.2]).unwrap();
        let cands = index.retrieve("q", "w2 w5 w11", 50);
        let mut reversed = cands.clone();
        reversed.entries.reverse();
        let a = m.rerank(&index, &corpus, "w2 w5 w11", &cands).unwrap();
        let b = m.rerank(&index, &corpus, "w2 w5 w11", &reversed).unwrap();
        assert_eq!(a, b);
        let mut ids_in: Vec<_> = cands.doc_ids().collect();
        let mut ids_out: Vec<_> = a.doc_ids().collect();
        ids_in.sort();
        ids_out.sort();
        assert_eq!(ids_in, ids_out);
    }

    #[test]
    fn scoring_is_pure() {
        let (_, index) = toy();
        let m = RerankerModel::init(Architecture::Mlp { hidden: 8 }, 1).unwrap();
        let mut m = m;
        let n = m.params.len();
        for (i, p) in m.params[n - 8..].iter_mut().enumerate() {
            *p = 0.1 * i as f64;
        }
        let a = m.score(&index, "w1 w2", "w2 w3 w4");
        let b = m.score(&index, "w1 w2", "w2 w3 w4");
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a != 0.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut m = RerankerModel::init(Architecture::Mlp { hidden: 3 }, 9).unwrap();
        m.metadata.seed = 9;
        m.metadata.validation_curve.push(ValidationPoint {
            step: 10,
            epoch: 0.5,
            score: 0.25,
            is_final: false,
        });
        m.save(&path).unwrap();
        assert_eq!(RerankerModel::load(&path).unwrap(), m);

        let mut bad = m.clone();
        bad.params.pop();
        util::write_json(&path, &bad).unwrap();
        assert!(RerankerModel::load(&path).is_err());
    }

    #[test]
    fn wrong_param_count_is_rejected() {
        assert!(RerankerModel::from_params(Architecture::Linear, vec![0.0; 5]).is_err());
        assert!(RerankerModel::init(Architecture::Mlp { hidden: 0 }, 0).is_err());
    }
}
