//! `pathrank` command-line interface.
//!
//! Every command reads an optional TOML config (`--config`), applies flag
//! overrides, writes its artifacts under `--out-dir`, and finishes by writing
//! `run.json`: the resolved config, digests of the inputs and the list of
//! outputs. Exit status is 0 only when all declared outputs were written,
//! 2 for usage errors and 1 for everything else.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "pathrank", version, about = "Instruction search for synthetic reranker training data")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Concurrency cap for LM requests.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Scripted mock LM (JSON) used instead of the HTTP client.
    #[arg(long, global = true)]
    pub mock_lm: Option<PathBuf>,
    /// Directory receiving every artifact of the command.
    #[arg(long, global = true, default_value = "run")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Corpus JSONL (`{"doc_id": ..., "text": ...}` per line).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Prebuilt index; built from the corpus when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct JudgmentArgs {
    /// Validation qrels (`query_id iteration doc_id grade`).
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Query texts for the qrels (`{"query_id": ..., "text": ...}` per line).
    #[arg(long)]
    pub queries: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    /// Held-out qrels scored after training.
    #[arg(long)]
    pub test_qrels: Option<PathBuf>,
    #[arg(long)]
    pub test_queries: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub(crate) enum Command {
    /// Build and save the BM25 index.
    Index {
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Generate synthetic queries for sampled passages and mine triplets.
    Generate {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Instruction text (overrides the config prompt).
        #[arg(long)]
        instruction: Option<String>,
        /// Number of passages to sample.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Train a reranker on a triplet file.
    Train {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        judgments: JudgmentArgs,
        #[arg(long)]
        triplets: PathBuf,
    },
    /// Score a checkpoint, a run file or plain BM25 with NDCG.
    Eval {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        judgments: JudgmentArgs,
        #[arg(long, conflicts_with_all = ["run", "external_triplets"])]
        checkpoint: Option<PathBuf>,
        /// TREC run file with reranked candidates.
        #[arg(long, conflicts_with = "external_triplets")]
        run: Option<PathBuf>,
        /// Train and rerank with the configured external program on these triplets.
        #[arg(long)]
        external_triplets: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Search for the instruction whose synthetic data trains the best reranker.
    Optimize {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        judgments: JudgmentArgs,
        #[command(flatten)]
        test: TestArgs,
        /// Starting instruction (overrides the config prompt).
        #[arg(long)]
        instruction: Option<String>,
        /// Total trials, including the starting instruction.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Train directly on the gold judgments.
    Baseline {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        judgments: JudgmentArgs,
        #[command(flatten)]
        test: TestArgs,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match commands::run(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<commands::UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
