//! Run configuration file.
//!
//! A TOML document whose tables mirror the module configurations. Every key
//! is optional; unknown keys are rejected. Command-line flags are applied on
//! top of the file, and the resolved value is echoed into every manifest.
//!
//! ```toml
//! seed = 7
//! jobs = 4
//!
//! [data]
//! corpus = "corpus.jsonl"
//! qrels = "dev.qrels"
//! queries = "dev.jsonl"
//! test_qrels = "test.qrels"
//! test_queries = "test.jsonl"
//! sample_positives = 10
//!
//! [bm25]
//! k1 = 0.9
//! b = 0.4
//!
//! [lm]
//! endpoint = "https://api.openai.com"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [prompt]
//! instruction = "Write a search query for the passage."
//!
//! [trainer]
//! learning_rate = 5e-5
//! optimizer = "sgd"
//!
//! [path]
//! trials = 10
//! depth = 1
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bm25::{Bm25Params, TokenizerConfig};
use crate::corpus::JudgmentOptions;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::lm::{LanguageModel, MockLm, MockScript, OpenAiClient, PromptTemplate, RetryPolicy, UreqTransport};
use crate::optimizer::{PathConfig, PipelineSettings};
use crate::reranker::{DirectTrainingLimits, ExternalTrainer, TrainerConfig};
use crate::synthesis::{GenerationOptions, MiningConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub corpus: Option<PathBuf>,
    /// Validation judgments (qrels) and their query texts.
    pub qrels: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    /// Held-out judgments used for the final report.
    pub test_qrels: Option<PathBuf>,
    pub test_queries: Option<PathBuf>,
    /// When set, this many positive queries are sampled from the validation
    /// judgments before use.
    pub sample_positives: Option<usize>,
    pub positive_floor: f64,
    pub max_grade: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let j = JudgmentOptions::default();
        Self {
            corpus: None,
            qrels: None,
            queries: None,
            test_qrels: None,
            test_queries: None,
            sample_positives: None,
            positive_floor: j.positive_floor,
            max_grade: j.max_grade,
        }
    }
}

impl DataConfig {
    pub fn judgment_options(&self) -> JudgmentOptions {
        JudgmentOptions {
            positive_floor: self.positive_floor,
            max_grade: self.max_grade,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    /// Base URL of an OpenAI-compatible server.
    pub endpoint: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_attempts: usize,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub max_in_flight: usize,
    /// Scripted mock used instead of the HTTP client.
    pub mock: Option<PathBuf>,
}

impl Default for LmConfig {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        Self {
            endpoint: "https://api.openai.com".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120.0,
            max_attempts: retry.max_attempts,
            base_delay_ms: retry.base_delay.as_millis() as u64,
            max_delay_ms: retry.max_delay.as_millis() as u64,
            max_in_flight: 8,
            mock: None,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_attempts == 0 || self.max_in_flight == 0 {
            return Err(Error::InvalidConfig("lm.max_attempts and lm.max_in_flight must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::InvalidConfig(format!("lm.timeout_secs must be > 0, got {}", self.timeout_secs)));
        }
        Ok(())
    }

    /// The mock when one is configured, the HTTP client otherwise.
    pub fn build(&self) -> Result<Box<dyn LanguageModel>> {
        self.validate()?;
        if let Some(path) = &self.mock {
            return Ok(Box::new(MockLm::new(MockScript::load(path)?)));
        }
        let transport = UreqTransport::new(Duration::from_secs_f64(self.timeout_secs));
        let client = OpenAiClient::new(&self.endpoint, Box::new(transport))
            .with_api_key_env(&self.api_key_env)
            .with_retry(RetryPolicy {
                max_attempts: self.max_attempts,
                base_delay: Duration::from_millis(self.base_delay_ms),
                max_delay: Duration::from_millis(self.max_delay_ms),
            })
            .with_max_in_flight(self.max_in_flight);
        Ok(Box::new(client))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; overrides the trainer and search seeds when set.
    pub seed: Option<u64>,
    /// Caps generation concurrency and in-flight LM requests.
    pub jobs: Option<usize>,
    pub data: DataConfig,
    pub tokenizer: TokenizerConfig,
    pub bm25: Bm25Params,
    pub lm: LmConfig,
    /// Instruction used by `generate` and as the starting point of `optimize`.
    pub prompt: Option<PromptTemplate>,
    pub generation: GenerationOptions,
    pub mining: MiningConfig,
    pub trainer: TrainerConfig,
    pub baseline: DirectTrainingLimits,
    pub eval: EvalConfig,
    pub path: PathConfig,
    pub external: Option<ExternalTrainer>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&raw, path)
    }

    pub fn parse(raw: &str, origin: &Path) -> Result<Self> {
        toml::from_str(raw).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |span| raw[..span.start.min(raw.len())].matches('\n').count() + 1);
            Error::parse(origin, line, e.message().to_string())
        })
    }

    /// Applies the `seed` and `jobs` overrides to the module configs.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(seed) = self.seed {
            self.trainer.seed = seed;
            self.path.seed = seed;
        }
        if let Some(jobs) = self.jobs {
            if jobs == 0 {
                return Err(Error::InvalidConfig("jobs must be at least 1".into()));
            }
            self.generation.jobs = jobs;
            self.lm.max_in_flight = jobs;
        }
        self.bm25.validate()?;
        self.lm.validate()?;
        self.trainer.validate()?;
        self.mining.validate()?;
        self.eval.validate()?;
        Ok(self)
    }

    pub fn pipeline(&self) -> PipelineSettings {
        PipelineSettings {
            generation: self.generation.clone(),
            mining: self.mining,
            trainer: self.trainer.clone(),
            eval: self.eval,
            path: self.path.clone(),
        }
    }

    pub fn prompt(&self) -> PromptTemplate {
        self.prompt
            .clone()
            .unwrap_or_else(|| PromptTemplate::new("Write a search query that the passage answers."))
    }
}
