//! Group-wise softmax training with warmup and validation-based selection.
//!
//! One optimizer step consumes `batch_groups` triplet groups (default 1) and
//! averages their gradients. The learning rate rises linearly over the first
//! `round(warmup_ratio · total_steps)` steps and then stays constant. Groups
//! are reshuffled every epoch from a seed derived from the trainer seed.
//!
//! Validation runs before the first step (when `validate_initial` is set), at
//! every `validate_every` fraction of an epoch, and after the last step if
//! that is not already a boundary. The returned parameters are those of the
//! best validation point, the latest one on ties.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::{FeatureVector, QueryContext, TermStats};
use super::loss::lce_loss_and_gradient;
use super::model::{Architecture, RerankerModel, ValidationPoint};
use crate::bm25::Bm25Index;
use crate::corpus::{Corpus, JudgmentSet};
use crate::error::{Error, Result};
use crate::eval::PreparedEval;
use crate::synthesis::{build_triplets, MiningConfig, QuerySeed, TripletSet};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub epochs: usize,
    /// Fraction of an epoch between validations; its reciprocal must be an
    /// integer.
    pub validate_every: f64,
    pub validate_initial: bool,
    pub batch_groups: usize,
    pub seed: u64,
    pub max_steps: Option<usize>,
    pub optimizer: OptimizerKind,
    pub architecture: Architecture,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            warmup_ratio: 0.1,
            epochs: 2,
            validate_every: 0.5,
            validate_initial: true,
            batch_groups: 1,
            seed: 0,
            max_steps: None,
            optimizer: OptimizerKind::Sgd,
            architecture: Architecture::Linear,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio < 1.0) {
            return bad(format!("warmup_ratio {} must lie in (0, 1)", self.warmup_ratio));
        }
        if self.epochs == 0 || self.batch_groups == 0 || self.max_steps == Some(0) {
            return bad("epochs, batch_groups and max_steps must be positive".into());
        }
        let per_epoch = 1.0 / self.validate_every;
        if !(self.validate_every > 0.0 && self.validate_every <= 1.0)
            || (per_epoch - per_epoch.round()).abs() > 1e-9
        {
            return bad(format!(
                "validate_every {} must divide an epoch a whole number of times",
                self.validate_every
            ));
        }
        Ok(())
    }

    pub fn initial_model(&self) -> Result<RerankerModel> {
        RerankerModel::init(self.architecture, util::derive_seed(self.seed, "init", 0))
    }
}

/// Step counts implied by a config and a dataset size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps_per_epoch: usize,
    pub total_steps: usize,
    pub warmup_steps: usize,
    /// Steps after which validation runs, ascending; the last is `total_steps`.
    pub validation_steps: Vec<usize>,
}

impl Schedule {
    pub fn new(cfg: &TrainerConfig, groups: usize) -> Self {
        let steps_per_epoch = groups.div_ceil(cfg.batch_groups);
        let full = steps_per_epoch * cfg.epochs;
        let total_steps = cfg.max_steps.map_or(full, |cap| cap.min(full));
        let warmup_steps = (cfg.warmup_ratio * total_steps as f64).round() as usize;
        let per_epoch = (1.0 / cfg.validate_every).round() as usize;
        let mut validation_steps: Vec<usize> = (0..cfg.epochs)
            .flat_map(|e| (1..=per_epoch).map(move |k| e * steps_per_epoch + k * steps_per_epoch / per_epoch))
            .filter(|&s| s > 0 && s <= total_steps)
            .collect();
        validation_steps.dedup();
        if validation_steps.last() != Some(&total_steps) {
            validation_steps.push(total_steps);
        }
        Self {
            steps_per_epoch,
            total_steps,
            warmup_steps,
            validation_steps,
        }
    }

    /// Learning rate used for step `step` (1-based).
    pub fn learning_rate(&self, base: f64, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            base
        } else {
            base * step as f64 / self.warmup_steps as f64
        }
    }
}

/// Precomputed features for one group: positive first, then negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFeatures {
    pub positive: FeatureVector,
    pub negatives: Vec<FeatureVector>,
}

pub fn prepare_groups(triplets: &TripletSet, corpus: &Corpus, index: &Bm25Index) -> Result<Vec<GroupFeatures>> {
    let mut docs: HashMap<&str, TermStats> = HashMap::new();
    for t in &triplets.triplets {
        for id in [t.positive_doc_id.as_str(), t.negative_doc_id.as_str()] {
            if docs.contains_key(id) {
                continue;
            }
            let doc = corpus.get(id).ok_or_else(|| Error::UnknownDocId {
                doc_id: id.to_string(),
                context: "training triplets".into(),
            })?;
            docs.insert(id, TermStats::new(index, &doc.text));
        }
    }
    Ok(triplets
        .groups()
        .map(|g| {
            let ctx = QueryContext::new(index, g.query);
            GroupFeatures {
                positive: ctx.features(index, &docs[g.positive_doc_id]),
                negatives: g.negatives.iter().map(|d| ctx.features(index, &docs[d])).collect(),
            }
        })
        .collect())
}

/// Loss of one group and its gradient with respect to the model parameters.
pub fn group_loss_and_gradient(model: &RerankerModel, group: &GroupFeatures) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.params.len()];
    let loss = accumulate_group(model, group, 1.0, &mut grad)?;
    Ok((loss, grad))
}

fn accumulate_group(model: &RerankerModel, group: &GroupFeatures, weight: f64, grad: &mut [f64]) -> Result<f64> {
    let pos = model.score_features(&group.positive);
    let negs: Vec<f64> = group.negatives.iter().map(|x| model.score_features(x)).collect();
    let (loss, score_grad) = lce_loss_and_gradient(pos, &negs)?;
    for (x, g) in std::iter::once(&group.positive).chain(&group.negatives).zip(score_grad) {
        model.accumulate_gradient(x, weight * g, grad);
    }
    Ok(loss)
}

enum OptimizerState {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl OptimizerState {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => OptimizerState::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            OptimizerState::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerState::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                *t += 1;
                let (c1, c2) = (1.0 - B1.powi(*t), 1.0 - B2.powi(*t));
                for i in 0..params.len() {
                    m[i] = B1 * m[i] + (1.0 - B1) * grad[i];
                    v[i] = B2 * v[i] + (1.0 - B2) * grad[i] * grad[i];
                    params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

/// Trains on `groups`, selecting the best validation checkpoint.
pub fn train(
    init: &RerankerModel,
    groups: &[GroupFeatures],
    cfg: &TrainerConfig,
    validation: &PreparedEval,
) -> Result<RerankerModel> {
    fit(init, groups, cfg, Some(validation))
}

/// Shared training loop; without validation the final parameters are kept.
pub fn fit(
    init: &RerankerModel,
    groups: &[GroupFeatures],
    cfg: &TrainerConfig,
    validation: Option<&PreparedEval>,
) -> Result<RerankerModel> {
    cfg.validate()?;
    if groups.is_empty() {
        return Err(Error::EmptyTriplets);
    }
    let schedule = Schedule::new(cfg, groups.len());
    let mut model = init.clone();
    let mut optimizer = OptimizerState::new(cfg.optimizer, model.params.len());
    let mut curve = Vec::new();
    let mut losses = Vec::new();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;

    let mut record = |model: &RerankerModel, step: usize, curve: &mut Vec<ValidationPoint>| {
        let Some(val) = validation else { return };
        let score = val.mean_ndcg(model);
        curve.push(ValidationPoint {
            step,
            epoch: step as f64 / schedule.steps_per_epoch as f64,
            score,
            is_final: step == schedule.total_steps,
        });
        if best.as_ref().is_none_or(|(s, _, _)| score >= *s) {
            best = Some((score, step, model.params.clone()));
        }
    };

    if cfg.validate_initial {
        record(&model, 0, &mut curve);
    }

    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut next_validation = schedule.validation_steps.iter().peekable();
    let mut interval_loss = (0.0, 0usize);
    let mut grad = vec![0.0; model.params.len()];
    let mut step = 0;
    'epochs: for epoch in 0u64.. {
        order.shuffle(&mut util::rng(util::derive_seed(cfg.seed, "epoch", epoch)));
        for batch in order.chunks(cfg.batch_groups) {
            if step == schedule.total_steps {
                break 'epochs;
            }
            step += 1;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let weight = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &g in batch {
                loss += weight
                    * accumulate_group(&model, &groups[g], weight, &mut grad).map_err(|e| Error::NanLoss {
                        step,
                        diagnostics: format!("group {g}: {e}"),
                    })?;
            }
            let lr = schedule.learning_rate(cfg.learning_rate, step);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NanLoss {
                    step,
                    diagnostics: format!(
                        "loss {loss}, lr {lr:e}, max |param| {:e}",
                        model.params.iter().fold(0.0f64, |a, p| a.max(p.abs()))
                    ),
                });
            }
            optimizer.apply(&mut model.params, &grad, lr);
            interval_loss.0 += loss;
            interval_loss.1 += 1;

            if next_validation.peek() == Some(&&step) {
                next_validation.next();
                losses.push(interval_loss.0 / interval_loss.1 as f64);
                interval_loss = (0.0, 0);
                record(&model, step, &mut curve);
            }
        }
    }

    if let Some((score, best_step, params)) = best {
        model.params = params;
        model.metadata.best_validation = Some(score);
        model.metadata.checkpoint_step = best_step;
    } else {
        model.metadata.best_validation = None;
        model.metadata.checkpoint_step = step;
    }
    model.metadata.seed = cfg.seed;
    model.metadata.steps = step;
    model.metadata.warmup_steps = schedule.warmup_steps;
    model.metadata.validation_curve = curve;
    model.metadata.loss_curve = losses;
    Ok(model)
}

/// Caps for training directly on gold judgments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectTrainingLimits {
    pub max_steps: usize,
    pub max_epochs: usize,
}

impl Default for DirectTrainingLimits {
    fn default() -> Self {
        Self {
            max_steps: 2000,
            max_epochs: 10,
        }
    }
}

/// Baseline: trains on the gold positives themselves, with negatives mined
/// for each gold query, for `min(max_steps, max_epochs)` and returns the final
/// parameters.
pub fn train_on_judgments(
    judgments: &JudgmentSet,
    corpus: &Corpus,
    index: &Bm25Index,
    mining: &MiningConfig,
    cfg: &TrainerConfig,
    limits: DirectTrainingLimits,
) -> Result<(RerankerModel, TripletSet)> {
    let positives = judgments.positive_pool();
    if positives.is_empty() {
        return Err(Error::NoPositives);
    }
    let seeds = positives.iter().map(|j| QuerySeed {
        text: &j.query_text,
        positive_doc_id: &j.doc_id,
    });
    let triplets = build_triplets(seeds, index, mining, util::derive_seed(cfg.seed, "baseline-negatives", 0))?;
    let groups = prepare_groups(&triplets, corpus, index)?;
    let capped = TrainerConfig {
        epochs: limits.max_epochs,
        max_steps: Some(limits.max_steps),
        validate_initial: false,
        ..cfg.clone()
    };
    let mut model = fit(&cfg.initial_model()?, &groups, &capped, None)?;
    model.metadata.triplet_digest = Some(triplets.digest());
    Ok((model, triplets))
}
