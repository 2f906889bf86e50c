//! Instruction-optimised synthetic data for training lightweight rerankers.
//!
//! The crate covers the whole loop: a document store with relevance
//! judgments, a BM25 first-stage retriever, a language-model client used to
//! synthesise queries from passages, triplet mining, a small feature-based
//! reranker with its trainer, NDCG evaluation, and the instruction search that
//! ties them together.

pub mod bm25;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod lm;
pub mod optimizer;
pub mod ranking;
pub mod reranker;
pub mod synthesis;
pub mod util;

pub use error::{Error, Result};
