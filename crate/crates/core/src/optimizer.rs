//! Instruction search over the query-generation prompt.
//!
//! Each trial turns one instruction into a trained reranker: generate one
//! query per sampled passage, mine negatives, train, and score the result by
//! average NDCG on the validation judgments. The trial with the highest score
//! wins; ties go to the lowest trial index.
//!
//! With `include_initial` the starting instruction is trial 0 and the
//! remaining `trials − 1` trials are proposals. At depth 1 every proposal comes
//! from the depth-1 meta-prompt, which shows only the starting instruction. At
//! depth 2 proposals are made in two rounds of at most `breadth`; each round
//! sees every scored attempt so far through the depth-2 meta-prompt.
//!
//! Meta-prompts are sent as a single user message. Depth 1:
//!
//! ```text
//! {PREAMBLE}
//!
//! Initial instruction: {instruction}
//!
//! Propose a new instruction that leads to higher accuracy. Reply with the instruction text only.
//! ```
//!
//! Depth 2 adds the scored history between the two paragraphs, worst first:
//!
//! ```text
//! Previous instructions and their validation scores, from worst to best:
//! Instruction #1 (score 0.200): {text}
//! Instruction #2 (score 0.500): {text}
//! ```
//!
//! and closes with "Propose a new instruction that is different from all
//! instructions above and leads to higher accuracy. Reply with the instruction
//! text only."
//!
//! Proposal requests carry `seed = trial index + 1000 · retry`, so repeated
//! proposals are distinguishable both to a sampling endpoint and to a scripted
//! mock.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bm25::Bm25Index;
use crate::corpus::{sample_documents, Corpus, Document, JudgmentSet, SampleManifest};
use crate::error::{Error, Result};
use crate::eval::{avg_ndcg, EvalConfig, EvalReport, ModelReranker, PreparedEval};
use crate::lm::{log_now, ChatMessage, LanguageModel, LmError, LmRequest, LogRecord, PromptTemplate, RequestLog};
use crate::reranker::{prepare_groups, train, RerankerModel, TrainerConfig};
use crate::synthesis::{
    build_triplets, generate_queries, GenerationOptions, GenerationSummary, MiningConfig, MiningStats, QuerySeed,
};
use crate::util;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

pub const META_PROMPT_PREAMBLE: &str = "You are optimizing the instruction given to a language model that writes a search query for a passage. The queries are used to train a reranker, so a better instruction leads to higher accuracy on the downstream retrieval task.";
const DEPTH1_REQUEST: &str =
    "Propose a new instruction that leads to higher accuracy. Reply with the instruction text only.";
const DEPTH2_HEADER: &str = "Previous instructions and their validation scores, from worst to best:";
const DEPTH2_REQUEST: &str = "Propose a new instruction that is different from all instructions above and leads to higher accuracy. Reply with the instruction text only.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposalConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo".into(),
            temperature: 1.0,
            max_tokens: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    /// Total trials, including the starting instruction when
    /// `include_initial` is set.
    pub trials: usize,
    pub depth: usize,
    /// Proposals per round at depth 2.
    pub breadth: usize,
    pub include_initial: bool,
    /// Passages sampled once and reused by every trial.
    pub sample_size: usize,
    pub seed: u64,
    pub proposal: ProposalConfig,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            trials: 10,
            depth: 1,
            breadth: 5,
            include_initial: true,
            sample_size: 1000,
            seed: 0,
            proposal: ProposalConfig::default(),
        }
    }
}

impl PathConfig {
    pub fn proposals(&self) -> usize {
        self.trials - usize::from(self.include_initial)
    }

    /// Validates the trial budget. At depth 2 the proposals must fill two
    /// rounds: `breadth < proposals ≤ 2 · breadth`.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.sample_size == 0 {
            return bad("sample_size must be at least 1".into());
        }
        match self.depth {
            1 => Ok(()),
            2 => {
                let p = self.proposals();
                if self.breadth == 0 || p <= self.breadth || p > 2 * self.breadth {
                    return bad(format!(
                        "depth 2 needs breadth < proposals <= 2 * breadth (breadth {}, proposals {p})",
                        self.breadth
                    ));
                }
                Ok(())
            }
            d => bad(format!("depth must be 1 or 2, got {d}")),
        }
    }

    /// `(trial, round)` for every proposal in execution order.
    fn proposal_plan(&self) -> Vec<(usize, usize)> {
        let first = usize::from(self.include_initial);
        (0..self.proposals())
            .map(|k| {
                let round = if self.depth == 2 { k / self.breadth } else { 0 };
                (first + k, round)
            })
            .collect()
    }
}

/// Every setting a run depends on.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSettings {
    pub generation: GenerationOptions,
    pub mining: MiningConfig,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
    pub path: PathConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Initial,
    Depth1,
    Depth2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptStatus {
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptSeeds {
    pub negatives: u64,
    pub trainer: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<u64>,
}

/// One ledger entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub trial: usize,
    pub round: usize,
    pub origin: Origin,
    pub status: AttemptStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<PromptTemplate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Checkpoint path relative to the run directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triplet_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mining: Option<MiningStats>,
    pub seeds: AttemptSeeds,
}

impl Attempt {
    pub fn succeeded(&self) -> bool {
        self.status == AttemptStatus::Succeeded
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub config_digest: String,
    pub settings: PipelineSettings,
    pub initial_prompt: PromptTemplate,
    pub corpus_digest: String,
    pub validation_digest: String,
    pub sample: SampleManifest,
    pub attempts: Vec<Attempt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_trial: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_score: Option<f64>,
    pub ledger_digest: String,
}

pub fn ledger_digest(attempts: &[Attempt]) -> String {
    util::sha256_hex(&serde_json::to_vec(attempts).unwrap_or_default())
}

/// Index of the best successful attempt; ties go to the lowest trial.
pub fn select_best(attempts: &[Attempt]) -> Option<&Attempt> {
    attempts
        .iter()
        .filter_map(|a| a.score.filter(|_| a.succeeded()).map(|s| (s, a)))
        .fold(None, |best: Option<(f64, &Attempt)>, (s, a)| match best {
            Some((bs, ba)) if bs > s || (bs == s && ba.trial < a.trial) => Some((bs, ba)),
            _ => Some((s, a)),
        })
        .map(|(_, a)| a)
}

pub fn render_depth1_meta_prompt(initial: &PromptTemplate) -> String {
    format!(
        "{META_PROMPT_PREAMBLE}\n\nInitial instruction: {}\n\n{DEPTH1_REQUEST}",
        initial.instruction
    )
}

/// History lists successful attempts by ascending score (trial order on
/// ties); failed attempts are left out.
pub fn render_depth2_meta_prompt(initial: &PromptTemplate, attempts: &[Attempt]) -> String {
    let mut scored: Vec<(f64, &str)> = attempts
        .iter()
        .filter(|a| a.succeeded())
        .filter_map(|a| Some((a.score?, a.prompt.as_ref()?.instruction.as_str())))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let history: Vec<String> = scored
        .iter()
        .enumerate()
        .map(|(i, (s, text))| format!("Instruction #{} (score {s:.3}): {text}", i + 1))
        .collect();
    format!(
        "{META_PROMPT_PREAMBLE}\n\nInitial instruction: {}\n\n{DEPTH2_HEADER}\n{}\n\n{DEPTH2_REQUEST}",
        initial.instruction,
        history.join("\n")
    )
}

fn clean_proposal(text: &str) -> &str {
    let t = text.trim();
    let t = t.strip_prefix("Instruction:").unwrap_or(t).trim();
    t.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(t)
        .trim()
}

/// Asks the LM for a new instruction, retrying once on an empty reply. The
/// returned template keeps every structural field of `initial`.
pub fn propose_prompt(
    initial: &PromptTemplate,
    meta_prompt: &str,
    lm: &dyn LanguageModel,
    cfg: &ProposalConfig,
    trial: usize,
    log: Option<&RequestLog>,
) -> Result<PromptTemplate> {
    for retry in 0..2u64 {
        let request = LmRequest {
            model: cfg.model.clone(),
            messages: vec![ChatMessage::user(meta_prompt)],
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
            seed: Some(trial as u64 + 1000 * retry),
        };
        let outcome = lm.complete(&request);
        let mut record = LogRecord {
            timestamp: log_now(),
            kind: "proposal".into(),
            template_hash: initial.hash(),
            passage_id: None,
            prompt: request.messages,
            completion: None,
            parse_status: "error".into(),
            attempts: 0,
            error: None,
        };
        let response = match outcome {
            Ok(r) => r,
            Err(e) => {
                record.error = Some(e.to_string());
                if let Some(log) = log {
                    log.append(record)?;
                }
                return Err(e.into());
            }
        };
        let proposal = clean_proposal(&response.text).to_string();
        record.attempts = response.attempts.len();
        record.completion = Some(response.text);
        record.parse_status = if proposal.is_empty() { "empty" } else { "parsed" }.into();
        if let Some(log) = log {
            log.append(record)?;
        }
        if !proposal.is_empty() {
            return Ok(initial.with_instruction(proposal));
        }
    }
    Err(Error::EmptyCompletion("instruction proposal was empty twice".into()))
}

pub fn propose_prompt_depth1(
    initial: &PromptTemplate,
    lm: &dyn LanguageModel,
    cfg: &ProposalConfig,
    trial: usize,
    log: Option<&RequestLog>,
) -> Result<PromptTemplate> {
    propose_prompt(initial, &render_depth1_meta_prompt(initial), lm, cfg, trial, log)
}

pub fn propose_prompt_depth2(
    initial: &PromptTemplate,
    attempts: &[Attempt],
    lm: &dyn LanguageModel,
    cfg: &ProposalConfig,
    trial: usize,
    log: Option<&RequestLog>,
) -> Result<PromptTemplate> {
    if !attempts.iter().any(|a| a.succeeded()) {
        return Err(Error::InvalidConfig("depth-2 proposal needs a scored attempt".into()));
    }
    propose_prompt(initial, &render_depth2_meta_prompt(initial, attempts), lm, cfg, trial, log)
}

/// Inputs shared by every trial.
pub struct PathInputs<'a> {
    pub corpus: &'a Corpus,
    pub index: &'a Bm25Index,
    pub validation: &'a JudgmentSet,
    pub initial: &'a PromptTemplate,
    pub lm: &'a dyn LanguageModel,
}

/// On-disk layout of a run:
///
/// ```text
/// manifest.json
/// requests.jsonl
/// selected.json                      copy of the winning checkpoint
/// attempts/attempt-NNN/attempt.json
/// attempts/attempt-NNN/triplets.tsv
/// attempts/attempt-NNN/checkpoint.json
/// ```
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn request_log_path(&self) -> PathBuf {
        self.root.join("requests.jsonl")
    }

    pub fn selected_path(&self) -> PathBuf {
        self.root.join("selected.json")
    }

    fn attempt_rel(trial: usize) -> String {
        format!("attempts/attempt-{trial:03}")
    }

    pub fn attempt_dir(&self, trial: usize) -> PathBuf {
        self.root.join(Self::attempt_rel(trial))
    }

    fn load_attempt(&self, trial: usize) -> Result<Option<Attempt>> {
        let path = self.attempt_dir(trial).join("attempt.json");
        if !path.exists() {
            return Ok(None);
        }
        util::read_json(&path).map(Some)
    }

    pub fn load_manifest(&self) -> Result<Option<RunManifest>> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(None);
        }
        util::read_json(&path).map(Some)
    }
}

#[derive(Debug)]
pub struct PathOutcome {
    pub model: RerankerModel,
    pub selected_trial: usize,
    pub manifest: RunManifest,
}

/// Errors that end the whole run instead of failing one trial.
fn is_fatal(e: &Error) -> bool {
    matches!(
        e,
        Error::Io { .. } | Error::Json(_) | Error::Lm(LmError::Auth { .. }) | Error::Lm(LmError::Config(_))
    )
}

struct TrialOutput {
    attempt: Attempt,
    model: RerankerModel,
}

struct Runner<'a> {
    inputs: &'a PathInputs<'a>,
    settings: &'a PipelineSettings,
    store: &'a RunStore,
    sample: Vec<Document>,
    validation: PreparedEval,
    log: RequestLog,
}

impl Runner<'_> {
    fn seeds(&self, trial: usize, proposal: bool) -> AttemptSeeds {
        let master = self.settings.path.seed;
        AttemptSeeds {
            negatives: util::derive_seed(master, "negatives", trial as u64),
            trainer: util::derive_seed(master, "trainer", trial as u64),
            proposal: proposal.then_some(trial as u64),
        }
    }

    /// Generation, mining, training and validation for one instruction.
    fn train_reranker(&self, trial: usize, prompt: &PromptTemplate, attempt: &mut Attempt) -> Result<RerankerModel> {
        let s = self.settings;
        let generated = generate_queries(prompt, &self.sample, self.inputs.lm, &s.generation, Some(&self.log))?;
        attempt.generation = Some(generated.summary.clone());
        let triplets = build_triplets(
            generated.queries.iter().map(QuerySeed::from),
            self.inputs.index,
            &s.mining,
            attempt.seeds.negatives,
        )?;
        attempt.mining = Some(triplets.stats.clone());
        attempt.triplet_digest = Some(triplets.digest());
        let dir = self.store.attempt_dir(trial);
        triplets.write_tsv(&dir.join("triplets.tsv"))?;

        let groups = prepare_groups(&triplets, self.inputs.corpus, self.inputs.index)?;
        let cfg = TrainerConfig {
            seed: attempt.seeds.trainer,
            ..s.trainer.clone()
        };
        let mut model = train(&cfg.initial_model()?, &groups, &cfg, &self.validation)?;
        model.metadata.triplet_digest = attempt.triplet_digest.clone();
        Ok(model)
    }

    fn run_trial(
        &self,
        trial: usize,
        round: usize,
        origin: Origin,
        prompt: Result<PromptTemplate>,
    ) -> Result<TrialOutput> {
        let mut attempt = Attempt {
            trial,
            round,
            origin,
            status: AttemptStatus::Failed,
            prompt: None,
            score: None,
            failure: None,
            checkpoint: None,
            triplet_digest: None,
            generation: None,
            mining: None,
            seeds: self.seeds(trial, origin != Origin::Initial),
        };
        let outcome = prompt.and_then(|p| {
            attempt.prompt = Some(p.clone());
            self.train_reranker(trial, &p, &mut attempt)
        });
        let model = match outcome {
            Ok(model) => model,
            Err(e) if is_fatal(&e) => return Err(e),
            Err(e) => {
                tracing::warn!(trial, error = %e, "trial failed");
                attempt.failure = Some(e.to_string());
                util::write_json(&self.store.attempt_dir(trial).join("attempt.json"), &attempt)?;
                return Ok(TrialOutput {
                    attempt,
                    model: RerankerModel::linear(),
                });
            }
        };
        let score = self.validation.mean_ndcg(&model);
        let rel = format!("{}/checkpoint.json", RunStore::attempt_rel(trial));
        model.save(&self.store.root.join(&rel))?;
        attempt.status = AttemptStatus::Succeeded;
        attempt.score = Some(score);
        attempt.checkpoint = Some(rel);
        util::write_json(&self.store.attempt_dir(trial).join("attempt.json"), &attempt)?;
        tracing::info!(trial, score, "trial finished");
        Ok(TrialOutput { attempt, model })
    }
}

fn config_digest(settings: &PipelineSettings, initial: &PromptTemplate, corpus: &Corpus, validation: &JudgmentSet) -> String {
    let snapshot = serde_json::json!({
        "settings": settings,
        "initial": initial,
        "corpus": corpus.source_digest(),
        "validation": validation.digest(),
    });
    util::sha256_hex(&serde_json::to_vec(&snapshot).unwrap_or_default())
}

/// Runs the full search, resuming from any attempts already recorded in
/// `store`.
pub fn run_path(inputs: &PathInputs<'_>, settings: &PipelineSettings, store: &RunStore) -> Result<PathOutcome> {
    let cfg = &settings.path;
    cfg.validate()?;
    settings.trainer.validate()?;
    settings.mining.validate()?;
    settings.eval.validate()?;
    inputs.initial.validate()?;
    if inputs.validation.positive_query_ids().is_empty() {
        return Err(Error::NoPositives);
    }

    let digest = config_digest(settings, inputs.initial, inputs.corpus, inputs.validation);
    if let Some(previous) = store.load_manifest()? {
        if previous.config_digest != digest {
            return Err(Error::InvalidConfig(format!(
                "{} belongs to a run with a different configuration",
                store.root().display()
            )));
        }
    }

    let sample = sample_documents(inputs.corpus, cfg.sample_size, util::derive_seed(cfg.seed, "sample", 0));
    let sample_manifest = SampleManifest::new(inputs.corpus, cfg.sample_size, cfg.seed, &sample);
    let runner = Runner {
        inputs,
        settings,
        store,
        validation: PreparedEval::new(inputs.validation, inputs.corpus, inputs.index, settings.eval)?,
        sample,
        log: RequestLog::open(&store.request_log_path())?,
    };

    let mut manifest = RunManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        config_digest: digest,
        settings: settings.clone(),
        initial_prompt: inputs.initial.clone(),
        corpus_digest: inputs.corpus.source_digest().to_string(),
        validation_digest: inputs.validation.digest(),
        sample: sample_manifest,
        attempts: Vec::new(),
        selected_trial: None,
        selected_score: None,
        ledger_digest: String::new(),
    };
    let mut best: Option<(f64, usize, RerankerModel)> = None;
    let mut accept = |out: TrialOutput, manifest: &mut RunManifest| -> Result<()> {
        if let Some(score) = out.attempt.score.filter(|_| out.attempt.succeeded()) {
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, out.attempt.trial, out.model));
            }
        }
        manifest.attempts.push(out.attempt);
        manifest.ledger_digest = ledger_digest(&manifest.attempts);
        util::write_json(&store.manifest_path(), manifest)
    };
    let resume = |trial: usize| -> Result<Option<TrialOutput>> {
        let Some(attempt) = store.load_attempt(trial)? else {
            return Ok(None);
        };
        tracing::info!(trial, "reusing recorded attempt");
        let model = match &attempt.checkpoint {
            Some(rel) if attempt.succeeded() => RerankerModel::load(&store.root().join(rel))?,
            _ => RerankerModel::linear(),
        };
        Ok(Some(TrialOutput { attempt, model }))
    };

    if cfg.include_initial {
        let out = match resume(0)? {
            Some(out) => out,
            None => runner.run_trial(0, 0, Origin::Initial, Ok(inputs.initial.clone()))?,
        };
        accept(out, &mut manifest)?;
    }
    let proposal_cfg = &cfg.proposal;
    let mut snapshot: Vec<Attempt> = manifest.attempts.clone();
    let mut current_round = 0;
    for (trial, round) in cfg.proposal_plan() {
        if round != current_round {
            snapshot = manifest.attempts.clone();
            current_round = round;
        }
        if let Some(out) = resume(trial)? {
            accept(out, &mut manifest)?;
            continue;
        }
        let use_history = cfg.depth == 2 && snapshot.iter().any(Attempt::succeeded);
        let (origin, prompt) = if use_history {
            (
                Origin::Depth2,
                propose_prompt_depth2(inputs.initial, &snapshot, inputs.lm, proposal_cfg, trial, Some(&runner.log)),
            )
        } else {
            (
                Origin::Depth1,
                propose_prompt_depth1(inputs.initial, inputs.lm, proposal_cfg, trial, Some(&runner.log)),
            )
        };
        if let Err(e) = &prompt {
            if is_fatal(e) {
                return Err(prompt.unwrap_err());
            }
        }
        let out = runner.run_trial(trial, round, origin, prompt)?;
        accept(out, &mut manifest)?;
    }

    let Some((score, trial, model)) = best else {
        return Err(Error::AllTrialsFailed(manifest.attempts.len()));
    };
    manifest.selected_trial = Some(trial);
    manifest.selected_score = Some(score);
    model.save(&store.selected_path())?;
    util::write_json(&store.manifest_path(), &manifest)?;
    Ok(PathOutcome {
        model,
        selected_trial: trial,
        manifest,
    })
}

/// Held-out evaluation of the selected reranker. Refuses to run when the test
/// queries overlap the validation queries.
pub fn evaluate_final(
    model: &RerankerModel,
    test: &JudgmentSet,
    validation: &JudgmentSet,
    corpus: &Corpus,
    index: &Bm25Index,
    cfg: &EvalConfig,
    ledger_digest: Option<&str>,
) -> Result<EvalReport> {
    let shared = test.shared_queries(validation);
    if !shared.is_empty() {
        return Err(Error::JudgmentOverlap(shared));
    }
    let mut report = avg_ndcg(&ModelReranker { model, index, corpus }, test, index, cfg)?;
    report.provenance = ledger_digest.map(str::to_string);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attempt(trial: usize, score: Option<f64>, text: &str) -> Attempt {
        Attempt {
            trial,
            round: 0,
            origin: Origin::Depth1,
            status: if score.is_some() {
                AttemptStatus::Succeeded
            } else {
                AttemptStatus::Failed
            },
            prompt: Some(PromptTemplate::new(text)),
            score,
            failure: None,
            checkpoint: None,
            triplet_digest: None,
            generation: None,
            mining: None,
            seeds: AttemptSeeds {
                negatives: 0,
                trainer: 0,
                proposal: None,
            },
        }
    }

    #[test]
    fn depth2_history_is_sorted_and_filtered() {
        let init = PromptTemplate::new("Write a query.");
        let ledger = [attempt(0, Some(0.5), "B"), attempt(1, None, "F"), attempt(2, Some(0.2), "A")];
        let text = render_depth2_meta_prompt(&init, &ledger);
        let a = text.find("Instruction #1 (score 0.200): A").unwrap();
        let b = text.find("Instruction #2 (score 0.500): B").unwrap();
        assert!(a < b);
        assert!(!text.contains(": F"));
        assert!(text.starts_with(META_PROMPT_PREAMBLE));
        assert!(text.ends_with("Reply with the instruction text only."));
    }

    #[test]
    fn depth1_wording() {
        let text = render_depth1_meta_prompt(&PromptTemplate::new("Write a query."));
        assert_eq!(
            text,
            format!("{META_PROMPT_PREAMBLE}\n\nInitial instruction: Write a query.\n\nPropose a new instruction that leads to higher accuracy. Reply with the instruction text only.")
        );
        assert!(text.contains("higher accuracy"));
    }

    #[test]
    fn selection_is_argmax_with_low_trial_tie_break() {
        let ledger = [
            attempt(0, Some(0.2), "a"),
            attempt(1, Some(0.5), "b"),
            attempt(2, Some(0.4), "c"),
            attempt(3, None, "d"),
            attempt(4, Some(0.5), "e"),
        ];
        assert_eq!(select_best(&ledger).unwrap().trial, 1);
        assert!(select_best(&ledger[3..4]).is_none());
    }

    #[test]
    fn plan_and_validation() {
        let d1 = PathConfig::default();
        assert!(d1.validate().is_ok());
        assert_eq!(d1.proposal_plan(), (1..10).map(|t| (t, 0)).collect::<Vec<_>>());
        let d2 = PathConfig {
            depth: 2,
            ..PathConfig::default()
        };
        assert!(d2.validate().is_ok());
        let rounds: Vec<usize> = d2.proposal_plan().iter().map(|p| p.1).collect();
        assert_eq!(rounds, vec![0, 0, 0, 0, 0, 1, 1, 1, 1]);
        assert!(PathConfig { depth: 2, breadth: 3, ..PathConfig::default() }.validate().is_err());
        assert!(PathConfig { depth: 3, ..PathConfig::default() }.validate().is_err());
        assert!(PathConfig { trials: 0, ..PathConfig::default() }.validate().is_err());
        let single = PathConfig { trials: 1, ..PathConfig::default() };
        assert!(single.proposal_plan().is_empty());
    }

    #[test]
    fn proposal_cleanup() {
        assert_eq!(clean_proposal("  \"Ask a hard question.\" \n"), "Ask a hard question.");
        assert_eq!(clean_proposal("Instruction: Be brief."), "Be brief.");
        assert_eq!(clean_proposal("  "), "");
    }
}
