//! Language-model abstraction used for query synthesis and instruction
//! proposals.
//!
//! Backends implement [`LanguageModel`]; an OpenAI-compatible HTTP client and
//! a scripted mock are provided.

mod client;
mod log;
mod mock;
mod template;

pub use client::{HttpReply, HttpTransport, OpenAiClient, RetryPolicy, UreqTransport};
pub use log::{now as log_now, LogRecord, RequestLog};
pub use mock::{MockLm, MockReply, MockRule, MockScript};
pub use template::{parse_query, render_prompt, ParseFlag, ParsedQuery, PromptTemplate};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Sampling seed forwarded to the endpoint; also distinguishes otherwise
    /// identical requests (e.g. repeated proposals).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl LmRequest {
    /// SHA-256 over the canonical JSON of the request.
    pub fn fingerprint(&self) -> String {
        crate::util::sha256_hex(&serde_json::to_vec(self).unwrap_or_default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

/// Outcome of one transport attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmResponse {
    pub text: String,
    pub usage: Usage,
    pub attempts: Vec<AttemptRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LmError {
    #[error("authentication failed (HTTP {status}): {body}")]
    Auth { status: u16, body: String },

    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },

    #[error("gave up after {attempts} attempts; last status {last_status:?}: {last_error}")]
    RetriesExhausted {
        attempts: usize,
        last_status: Option<u16>,
        last_error: String,
    },

    #[error("malformed response: {0}")]
    MalformedResponse(String),

    #[error("configuration: {0}")]
    Config(String),
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError>;
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError> {
        (**self).complete(request)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Box<T> {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError> {
        (**self).complete(request)
    }
}
