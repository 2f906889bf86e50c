//! Command implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pathrank::bm25::Bm25Index;
use pathrank::config::RunConfig;
use pathrank::corpus::{load_corpus, load_judgments, sample_documents, sample_judgments, Corpus, CorpusFormat, JudgmentSet};
use pathrank::eval::{avg_ndcg, Bm25Passthrough, EvalReport, ModelReranker, PreparedEval, RunReranker};
use pathrank::lm::{PromptTemplate, RequestLog};
use pathrank::optimizer::{evaluate_final, run_path, PathInputs, RunStore};
use pathrank::ranking::read_run;
use pathrank::reranker::{prepare_external_inputs, prepare_groups, train, train_on_judgments, RerankerModel};
use pathrank::synthesis::{build_triplets, generate_queries, QuerySeed, TripletSet};
use pathrank::util;
use serde::Serialize;

use crate::{Command, CommonArgs, CorpusArgs, JudgmentArgs, TestArgs};

/// Missing or contradictory arguments; reported with exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Serialize)]
struct InputRecord {
    path: PathBuf,
    sha256: String,
}

/// `run.json`, written after every other artifact.
#[derive(Debug, Serialize)]
struct CommandManifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    inputs: BTreeMap<String, InputRecord>,
    outputs: Vec<String>,
    summary: serde_json::Value,
}

struct Session {
    command: &'static str,
    config: RunConfig,
    out_dir: PathBuf,
    inputs: BTreeMap<String, InputRecord>,
    outputs: Vec<String>,
}

impl Session {
    fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(
            name.to_string(),
            InputRecord {
                path: path.to_path_buf(),
                sha256: util::sha256_hex(&bytes),
            },
        );
        Ok(())
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out_dir.join(name)
    }

    fn corpus(&mut self) -> Result<Corpus> {
        let path = self
            .config
            .data
            .corpus
            .clone()
            .ok_or_else(|| usage("a corpus is required (--corpus or data.corpus)"))?;
        self.input("corpus", &path)?;
        Ok(load_corpus(&path, CorpusFormat::Jsonl)?)
    }

    fn index(&mut self, prebuilt: Option<&Path>, corpus: &Corpus) -> Result<Bm25Index> {
        let Some(path) = prebuilt else {
            return Ok(Bm25Index::build(corpus, self.config.tokenizer, self.config.bm25)?);
        };
        self.input("index", path)?;
        let index = Bm25Index::load(path)?;
        let same = index.doc_count() == corpus.len()
            && corpus.iter().zip(index.doc_ids()).all(|(d, id)| &d.doc_id == id);
        if !same {
            bail!("{} was not built from this corpus", path.display());
        }
        Ok(index)
    }

    fn judgments(&mut self, corpus: &Corpus, qrels: Option<&PathBuf>, queries: Option<&PathBuf>, label: &str) -> Result<JudgmentSet> {
        let (Some(qrels), Some(queries)) = (qrels, queries) else {
            return Err(usage(format!("{label} judgments need both a qrels file and a queries file")));
        };
        self.input(&format!("{label}_qrels"), qrels)?;
        self.input(&format!("{label}_queries"), queries)?;
        Ok(load_judgments(qrels, queries, corpus, self.config.data.judgment_options())?)
    }

    fn validation(&mut self, corpus: &Corpus) -> Result<JudgmentSet> {
        let data = self.config.data.clone();
        let set = self.judgments(corpus, data.qrels.as_ref(), data.queries.as_ref(), "validation")?;
        match data.sample_positives {
            Some(n) => Ok(sample_judgments(&set, n, util::derive_seed(self.config.path.seed, "positives", 0))?),
            None => Ok(set),
        }
    }

    fn test(&mut self, corpus: &Corpus) -> Result<Option<JudgmentSet>> {
        let data = self.config.data.clone();
        if data.test_qrels.is_none() && data.test_queries.is_none() {
            return Ok(None);
        }
        self.judgments(corpus, data.test_qrels.as_ref(), data.test_queries.as_ref(), "test")
            .map(Some)
    }

    fn finish(mut self, summary: serde_json::Value) -> Result<()> {
        let path = self.out_dir.join("run.json");
        self.outputs.push("run.json".into());
        let manifest = CommandManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config: &self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            summary,
        };
        util::write_json(&path, &manifest)?;
        Ok(())
    }
}

fn set<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn apply_corpus(cfg: &mut RunConfig, args: &CorpusArgs) {
    set(&mut cfg.data.corpus, args.corpus.clone());
}

fn apply_judgments(cfg: &mut RunConfig, args: &JudgmentArgs) {
    set(&mut cfg.data.qrels, args.qrels.clone());
    set(&mut cfg.data.queries, args.queries.clone());
}

fn apply_test(cfg: &mut RunConfig, args: &TestArgs) {
    set(&mut cfg.data.test_qrels, args.test_qrels.clone());
    set(&mut cfg.data.test_queries, args.test_queries.clone());
}

fn apply_instruction(cfg: &mut RunConfig, instruction: Option<&String>) {
    if let Some(text) = instruction {
        cfg.prompt = Some(match &cfg.prompt {
            Some(p) => p.with_instruction(text.clone()),
            None => PromptTemplate::new(text.clone()),
        });
    }
}

/// File config, then common flags, then command flags.
fn load_config(common: &CommonArgs, command: &Command) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, common.seed);
    set(&mut cfg.jobs, common.jobs);
    set(&mut cfg.lm.mock, common.mock_lm.clone());
    match command {
        Command::Index { corpus } => apply_corpus(&mut cfg, corpus),
        Command::Generate {
            corpus,
            instruction,
            sample,
        } => {
            apply_corpus(&mut cfg, corpus);
            apply_instruction(&mut cfg, instruction.as_ref());
            if let Some(n) = sample {
                cfg.path.sample_size = *n;
            }
        }
        Command::Train { corpus, judgments, .. } => {
            apply_corpus(&mut cfg, corpus);
            apply_judgments(&mut cfg, judgments);
        }
        Command::Eval {
            corpus,
            judgments,
            k,
            depth,
            ..
        } => {
            apply_corpus(&mut cfg, corpus);
            apply_judgments(&mut cfg, judgments);
            if let Some(k) = k {
                cfg.eval.k = *k;
            }
            if let Some(d) = depth {
                cfg.eval.rerank_depth = *d;
            }
        }
        Command::Optimize {
            corpus,
            judgments,
            test,
            instruction,
            trials,
            depth,
        } => {
            apply_corpus(&mut cfg, corpus);
            apply_judgments(&mut cfg, judgments);
            apply_test(&mut cfg, test);
            apply_instruction(&mut cfg, instruction.as_ref());
            if let Some(t) = trials {
                cfg.path.trials = *t;
            }
            if let Some(d) = depth {
                cfg.path.depth = *d;
            }
        }
        Command::Baseline {
            corpus,
            judgments,
            test,
        } => {
            apply_corpus(&mut cfg, corpus);
            apply_judgments(&mut cfg, judgments);
            apply_test(&mut cfg, test);
        }
    }
    cfg.resolve().map_err(|e| match e {
        pathrank::Error::InvalidConfig(msg) => usage(msg),
        other => other.into(),
    })
}

pub fn run(common: &CommonArgs, command: Command) -> Result<()> {
    let config = load_config(common, &command)?;
    fs::create_dir_all(&common.out_dir).with_context(|| format!("creating {}", common.out_dir.display()))?;
    let name = match &command {
        Command::Index { .. } => "index",
        Command::Generate { .. } => "generate",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Optimize { .. } => "optimize",
        Command::Baseline { .. } => "baseline",
    };
    let mut session = Session {
        command: name,
        config,
        out_dir: common.out_dir.clone(),
        inputs: BTreeMap::new(),
        outputs: Vec::new(),
    };
    if let Some(path) = session.config.lm.mock.clone() {
        session.input("mock_lm", &path)?;
    }
    let summary = match command {
        Command::Index { .. } => cmd_index(&mut session)?,
        Command::Generate { corpus, .. } => cmd_generate(&mut session, &corpus)?,
        Command::Train { corpus, triplets, .. } => cmd_train(&mut session, &corpus, &triplets)?,
        Command::Eval {
            corpus,
            checkpoint,
            run,
            external_triplets,
            ..
        } => cmd_eval(&mut session, &corpus, checkpoint, run, external_triplets)?,
        Command::Optimize { corpus, .. } => cmd_optimize(&mut session, &corpus)?,
        Command::Baseline { corpus, .. } => cmd_baseline(&mut session, &corpus)?,
    };
    session.finish(summary)
}

fn cmd_index(s: &mut Session) -> Result<serde_json::Value> {
    let corpus = s.corpus()?;
    let index = Bm25Index::build(&corpus, s.config.tokenizer, s.config.bm25)?;
    index.save(&s.output("index.json"))?;
    println!("indexed {} documents", index.doc_count());
    Ok(serde_json::json!({
        "documents": index.doc_count(),
        "avg_doc_length": index.avg_doc_length(),
    }))
}

fn cmd_generate(s: &mut Session, args: &CorpusArgs) -> Result<serde_json::Value> {
    let corpus = s.corpus()?;
    let index = s.index(args.index.as_deref(), &corpus)?;
    let lm = s.config.lm.build()?;
    let prompt = s.config.prompt();
    prompt.validate()?;
    let seed = s.config.path.seed;
    let sample = sample_documents(&corpus, s.config.path.sample_size, util::derive_seed(seed, "sample", 0));
    let log = RequestLog::open(&s.output("requests.jsonl"))?;
    let generated = generate_queries(&prompt, &sample, lm.as_ref(), &s.config.generation, Some(&log))?;
    let triplets = build_triplets(
        generated.queries.iter().map(QuerySeed::from),
        &index,
        &s.config.mining,
        util::derive_seed(seed, "negatives", 0),
    )?;

    let mut lines = Vec::new();
    for q in &generated.queries {
        serde_json::to_writer(&mut lines, q)?;
        lines.push(b'\n');
    }
    util::write_atomic(&s.output("queries.jsonl"), &lines)?;
    triplets.write_tsv(&s.output("triplets.tsv"))?;

    let g = &generated.summary;
    println!(
        "generated {} of {} queries (dropped {}, drop rate {:.3}, fallback parses {}); {} triplet rows",
        g.generated,
        g.attempted,
        g.dropped,
        g.drop_rate,
        g.fallback_parses,
        triplets.len()
    );
    Ok(serde_json::json!({
        "generation": g,
        "mining": triplets.stats,
        "triplet_rows": triplets.len(),
        "triplet_digest": triplets.digest(),
        "template_hash": prompt.hash(),
    }))
}

fn cmd_train(s: &mut Session, args: &CorpusArgs, triplets_path: &Path) -> Result<serde_json::Value> {
    let corpus = s.corpus()?;
    let index = s.index(args.index.as_deref(), &corpus)?;
    s.input("triplets", triplets_path)?;
    let triplets = TripletSet::read_tsv(triplets_path)?;
    let validation = s.validation(&corpus)?;
    let groups = prepare_groups(&triplets, &corpus, &index)?;
    let prepared = PreparedEval::new(&validation, &corpus, &index, s.config.eval)?;
    let cfg = &s.config.trainer;
    let mut model = train(&cfg.initial_model()?, &groups, cfg, &prepared)?;
    model.metadata.triplet_digest = Some(triplets.digest());
    model.save(&s.output("checkpoint.json"))?;
    let best = model.metadata.best_validation.unwrap_or(f64::NAN);
    println!(
        "trained {} steps on {} groups; best validation NDCG@{} {best:.4} at step {}",
        model.metadata.steps,
        groups.len(),
        s.config.eval.k,
        model.metadata.checkpoint_step
    );
    Ok(serde_json::json!({
        "groups": groups.len(),
        "steps": model.metadata.steps,
        "checkpoint_step": model.metadata.checkpoint_step,
        "best_validation": model.metadata.best_validation,
        "checkpoint_digest": model.digest(),
    }))
}

fn report_summary(report: &EvalReport) -> serde_json::Value {
    serde_json::json!({
        "reranker": report.reranker,
        "mean": report.mean,
        "num_queries": report.num_queries,
    })
}

fn cmd_eval(
    s: &mut Session,
    args: &CorpusArgs,
    checkpoint: Option<PathBuf>,
    run: Option<PathBuf>,
    external_triplets: Option<PathBuf>,
) -> Result<serde_json::Value> {
    let corpus = s.corpus()?;
    let index = s.index(args.index.as_deref(), &corpus)?;
    let judgments = s.validation(&corpus)?;
    let cfg = s.config.eval;
    let report = if let Some(path) = checkpoint {
        s.input("checkpoint", &path)?;
        let model = RerankerModel::load(&path)?;
        avg_ndcg(&ModelReranker { model: &model, index: &index, corpus: &corpus }, &judgments, &index, &cfg)?
    } else if let Some(path) = run {
        s.input("run", &path)?;
        let label = path.display().to_string();
        avg_ndcg(&RunReranker::new(read_run(&path)?, label), &judgments, &index, &cfg)?
    } else if let Some(triplets) = external_triplets {
        let trainer = s
            .config
            .external
            .clone()
            .ok_or_else(|| usage("--external-triplets needs an [external] section in the config"))?;
        s.input("triplets", &triplets)?;
        let inputs = prepare_external_inputs(&s.out_dir, &judgments, &index, &cfg)?;
        s.outputs.push("queries.jsonl".into());
        s.outputs.push("candidates.run".into());
        let lists = trainer.run(&triplets, &inputs, &s.output("reranked.run"))?;
        let label = trainer.program.display().to_string();
        avg_ndcg(&RunReranker::new(lists, label), &judgments, &index, &cfg)?
    } else {
        avg_ndcg(&Bm25Passthrough, &judgments, &index, &cfg)?
    };
    report.save(&s.output("report.json"))?;
    println!("{}: NDCG@{} = {:.4} over {} queries", report.reranker, cfg.k, report.mean, report.num_queries);
    Ok(report_summary(&report))
}

fn cmd_optimize(s: &mut Session, args: &CorpusArgs) -> Result<serde_json::Value> {
    let corpus = s.corpus()?;
    let index = s.index(args.index.as_deref(), &corpus)?;
    let validation = s.validation(&corpus)?;
    let test = s.test(&corpus)?;
    let lm = s.config.lm.build()?;
    let initial = s.config.prompt();
    let store = RunStore::new(&s.out_dir)?;
    let inputs = PathInputs {
        corpus: &corpus,
        index: &index,
        validation: &validation,
        initial: &initial,
        lm: lm.as_ref(),
    };
    let outcome = run_path(&inputs, &s.config.pipeline(), &store)?;
    s.outputs.extend(["manifest.json", "requests.jsonl", "selected.json", "attempts"].map(String::from));
    let m = &outcome.manifest;
    let selected = &m.attempts[outcome.selected_trial];
    println!(
        "selected trial {} of {} with validation NDCG@{} {:.4}: {}",
        outcome.selected_trial,
        m.attempts.len(),
        s.config.eval.k,
        m.selected_score.unwrap_or(f64::NAN),
        selected.prompt.as_ref().map_or("", |p| p.instruction.as_str())
    );
    let mut summary = serde_json::json!({
        "selected_trial": outcome.selected_trial,
        "selected_score": m.selected_score,
        "attempts": m.attempts.len(),
        "failed_attempts": m.attempts.iter().filter(|a| !a.succeeded()).count(),
        "ledger_digest": m.ledger_digest,
    });
    if let Some(test) = test {
        let report = evaluate_final(
            &outcome.model,
            &test,
            &validation,
            &corpus,
            &index,
            &s.config.eval,
            Some(&m.ledger_digest),
        )?;
        report.save(&s.output("final_report.json"))?;
        println!("held-out NDCG@{} = {:.4} over {} queries", s.config.eval.k, report.mean, report.num_queries);
        summary["test"] = report_summary(&report);
    }
    Ok(summary)
}

fn cmd_baseline(s: &mut Session, args: &CorpusArgs) -> Result<serde_json::Value> {
    let corpus = s.corpus()?;
    let index = s.index(args.index.as_deref(), &corpus)?;
    let validation = s.validation(&corpus)?;
    let test = s.test(&corpus)?;
    let (model, triplets) = train_on_judgments(
        &validation,
        &corpus,
        &index,
        &s.config.mining,
        &s.config.trainer,
        s.config.baseline,
    )?;
    triplets.write_tsv(&s.output("triplets.tsv"))?;
    model.save(&s.output("checkpoint.json"))?;
    println!(
        "trained {} steps on {} gold groups",
        model.metadata.steps,
        triplets.num_groups()
    );
    let mut summary = serde_json::json!({
        "groups": triplets.num_groups(),
        "steps": model.metadata.steps,
        "checkpoint_digest": model.digest(),
    });
    if let Some(test) = test {
        let report = evaluate_final(&model, &test, &validation, &corpus, &index, &s.config.eval, None)?;
        report.save(&s.output("report.json"))?;
        println!("held-out NDCG@{} = {:.4} over {} queries", s.config.eval.k, report.mean, report.num_queries);
        summary["test"] = report_summary(&report);
    }
    Ok(summary)
}
