//! Synthetic marker-token retrieval task shared by the integration tests.
//!
//! Every document starts with a unique marker token (`mk0000`, `mk0001`, ...)
//! followed by a variable number of filler words drawn from a Zipf-weighted
//! vocabulary. A gold query for document `i` is its marker, a few of its
//! filler words and a few Zipf-distributed noise words; the only relevant
//! document is the one holding the marker. The noise words let long documents
//! full of common words outrank short relevant ones under BM25, which leaves
//! room for a trained reranker to improve on the first stage.
//!
//! Two scripted instructions drive the mock LM: the "marker" instruction
//! answers with the start of the passage plus noise words (queries shaped like
//! the gold ones), the "noise" instruction answers with random vocabulary
//! words only.

#![allow(dead_code)]

use pathrank::bm25::{Bm25Index, Bm25Params, TokenizerConfig};
use pathrank::corpus::{Corpus, Document, JudgmentSet, RelevanceJudgment};
use pathrank::lm::{MockLm, MockReply, MockRule, MockScript, PromptTemplate};
use pathrank::reranker::{OptimizerKind, TrainerConfig};
use pathrank::util;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;

pub const MARKER_INSTRUCTION: &str =
    "Write a search query that names the catalogue code at the start of the passage.";
pub const NOISE_INSTRUCTION: &str = "Write any search query you like.";
pub const NOISE_VARIANT: &str = "Write any search query you like, keeping it brief.";
pub const MARKER_TRIGGER: &str = "catalogue code";
pub const NOISE_TRIGGER: &str = "any search query";
const NOISE_SCALE: f64 = 50.0;
pub const PROPOSAL_TRIGGER: &str = "Propose a new instruction";

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub docs: usize,
    pub vocab: usize,
    pub zipf: f64,
    /// Filler words per document, inclusive range.
    pub doc_len: (usize, usize),
    /// Filler words in a gold query taken from the relevant document.
    pub query_fillers: usize,
    /// Extra gold-query words drawn from the whole vocabulary.
    pub query_noise: usize,
    pub validation_queries: usize,
    pub test_queries: usize,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            docs: 2000,
            vocab: 400,
            zipf: 1.0,
            doc_len: (3, 100),
            query_fillers: 1,
            query_noise: 3,
            validation_queries: 10,
            test_queries: 100,
            seed: 7,
        }
    }
}

pub struct Task {
    pub corpus: Corpus,
    pub index: Bm25Index,
    pub validation: JudgmentSet,
    pub test: JudgmentSet,
    pub vocab: Vec<String>,
    /// Vocabulary with word `r` repeated in proportion to `1/r`; uniform
    /// draws from it approximate the Zipf filler distribution.
    pub noise_words: Vec<String>,
    pub spec: TaskSpec,
}

pub fn marker(i: usize) -> String {
    format!("mk{i:04}")
}

pub fn word(i: usize) -> String {
    format!("w{i:03}")
}

impl Task {
    pub fn build(spec: TaskSpec) -> Task {
        let mut rng = util::rng(spec.seed);
        let vocab: Vec<String> = (0..spec.vocab).map(word).collect();
        let weights: Vec<f64> = (1..=spec.vocab).map(|r| 1.0 / (r as f64).powf(spec.zipf)).collect();
        let dist = WeightedIndex::new(&weights).unwrap();
        let noise_words: Vec<String> = vocab
            .iter()
            .enumerate()
            .flat_map(|(r, w)| std::iter::repeat_n(w.clone(), (NOISE_SCALE / (r + 1) as f64).ceil() as usize))
            .collect();
        let docs: Vec<Document> = (0..spec.docs)
            .map(|i| {
                let len = rng.random_range(spec.doc_len.0..=spec.doc_len.1);
                let mut words = vec![marker(i)];
                words.extend((0..len).map(|_| vocab[dist.sample(&mut rng)].clone()));
                Document::new(format!("doc{i:04}"), words.join(" "))
            })
            .collect();

        let picked = index::sample(&mut rng, spec.docs, spec.validation_queries + spec.test_queries).into_vec();
        let judgments = |ids: &[usize], prefix: &str, rng: &mut rand_chacha::ChaCha8Rng| {
            let js = ids.iter().enumerate().map(|(n, &d)| {
                let fillers: Vec<&str> = docs[d].text.split(' ').skip(1).collect();
                let chosen = index::sample(rng, fillers.len(), spec.query_fillers.min(fillers.len()));
                let mut words = vec![marker(d)];
                words.extend(chosen.into_iter().map(|k| fillers[k].to_string()));
                words.extend((0..spec.query_noise).map(|_| noise_words[rng.random_range(0..noise_words.len())].clone()));
                RelevanceJudgment {
                    query_id: format!("{prefix}{n:03}"),
                    query_text: words.join(" "),
                    doc_id: docs[d].doc_id.clone(),
                    grade: 1.0,
                }
            });
            JudgmentSet::from_judgments(js.collect::<Vec<_>>(), 1.0)
        };
        let validation = judgments(&picked[..spec.validation_queries], "val", &mut rng);
        let test = judgments(&picked[spec.validation_queries..], "test", &mut rng);

        let corpus = Corpus::from_documents(docs).unwrap();
        let index = Bm25Index::build(&corpus, TokenizerConfig::default(), Bm25Params::default()).unwrap();
        Task {
            corpus,
            index,
            validation,
            test,
            vocab,
            noise_words,
            spec,
        }
    }

    /// Trainer settings used by the end-to-end scenarios. The default
    /// learning rate suits transformer fine-tuning; the six-weight linear
    /// scorer needs Adam and a larger step to move off the BM25 direction
    /// within the step budget.
    pub fn trainer(seed: u64) -> TrainerConfig {
        TrainerConfig {
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Adam,
            seed,
            ..TrainerConfig::default()
        }
    }

    /// Mock LM for the two-instruction scenario. Proposal `n` (the request
    /// seed) answers with the marker instruction when `n` is in
    /// `marker_proposals`, otherwise with a noise variant.
    pub fn mock_lm(&self, marker_proposals: &[u64], proposals: u64) -> MockLm {
        let mut rules = Vec::new();
        for seed in 0..=proposals {
            let text = if marker_proposals.contains(&seed) {
                MARKER_INSTRUCTION.to_string()
            } else {
                format!("{NOISE_VARIANT} (variant {seed})")
            };
            rules.push(MockRule::when_contains(PROPOSAL_TRIGGER, MockReply::Text { text }).with_seed(seed));
        }
        rules.push(MockRule::when_contains(
            MARKER_TRIGGER,
            MockReply::Mixed {
                echo: 1 + self.spec.query_fillers,
                random: self.spec.query_noise,
                words: self.noise_words.clone(),
            },
        ));
        rules.push(MockRule::when_contains(
            NOISE_TRIGGER,
            MockReply::Random {
                tokens: 1 + self.spec.query_fillers + self.spec.query_noise,
                words: self.vocab.clone(),
            },
        ));
        MockLm::new(MockScript {
            default_echo_tokens: 4,
            rules,
        })
    }
}

pub fn marker_prompt() -> PromptTemplate {
    PromptTemplate::new(MARKER_INSTRUCTION)
}

pub fn noise_prompt() -> PromptTemplate {
    PromptTemplate::new(NOISE_INSTRUCTION)
}
