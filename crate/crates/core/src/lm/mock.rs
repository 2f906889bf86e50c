//! Deterministic scripted language model for offline runs.
//!
//! A script is a JSON object:
//!
//! ```json
//! {
//!   "default_echo_tokens": 8,
//!   "rules": [
//!     {"contains": ["counterargument"], "reply": {"kind": "echo", "tokens": 5}},
//!     {"contains": ["Propose"], "seed": 1, "reply": {"kind": "text", "text": "Ask a hard question."}},
//!     {"fingerprint": "ab12...", "reply": {"kind": "random", "tokens": 4, "words": ["x", "y"]}}
//!   ]
//! }
//! ```
//!
//! Rules are tried in order; all given conditions must hold. `contains`
//! matches against the system and user contents joined by a newline. Unmatched
//! requests echo the first `default_echo_tokens` whitespace tokens of the
//! passage after the answer cue (or of the user message, for requests without
//! a passage field).

use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::{AttemptRecord, LanguageModel, LmError, LmRequest, LmResponse, Usage};
use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MockReply {
    /// Literal completion.
    Text { text: String },
    /// Answer cue followed by the first `tokens` passage tokens.
    Echo { tokens: usize },
    /// Answer cue followed by `tokens` words drawn from `words`, seeded by the
    /// request fingerprint.
    Random { tokens: usize, words: Vec<String> },
    /// The first `echo` passage tokens followed by `random` words drawn from
    /// `words`, seeded as for `random`.
    Mixed {
        echo: usize,
        random: usize,
        words: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    pub reply: MockReply,
}

impl MockRule {
    pub fn when_contains(needle: impl Into<String>, reply: MockReply) -> Self {
        Self {
            contains: vec![needle.into()],
            seed: None,
            fingerprint: None,
            reply,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn matches(&self, haystack: &str, request: &LmRequest, fingerprint: &str) -> bool {
        self.contains.iter().all(|n| haystack.contains(n.as_str()))
            && self.seed.is_none_or(|s| request.seed == Some(s))
            && self.fingerprint.as_deref().is_none_or(|f| f == fingerprint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default = "default_echo")]
    pub default_echo_tokens: usize,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

fn default_echo() -> usize {
    8
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            default_echo_tokens: default_echo(),
            rules: Vec::new(),
        }
    }
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&raw).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockLm {
    script: MockScript,
}

struct Rendered<'a> {
    passage: Option<&'a str>,
    cue: Option<&'a str>,
    user: &'a str,
}

/// Recovers the passage and answer cue from the rendered user message
/// (`{Field}: {passage}\n\n...\n{cue}`).
fn split_user(user: &str) -> Rendered<'_> {
    let passage = user.find(": ").zip(user.rfind("\n\n")).and_then(|(colon, sep)| {
        let head = &user[..colon];
        (colon < sep && !head.contains('\n')).then(|| &user[colon + 2..sep])
    });
    let cue = passage.and_then(|_| user.rsplit('\n').next());
    Rendered { passage, cue, user }
}

impl MockLm {
    pub fn new(script: MockScript) -> Self {
        Self { script }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    fn answer(cue: Option<&str>, tokens: Vec<&str>) -> String {
        match cue {
            Some(cue) => format!("{cue} {}", tokens.join(" ")),
            None => tokens.join(" "),
        }
    }

    fn reply(&self, reply: &MockReply, rendered: &Rendered<'_>, fingerprint: &str) -> String {
        let source = rendered.passage.unwrap_or(rendered.user);
        match reply {
            MockReply::Text { text } => text.clone(),
            MockReply::Echo { tokens } => Self::answer(
                rendered.cue,
                source.split_whitespace().take(*tokens).collect(),
            ),
            MockReply::Random { tokens, words } => Self::answer(rendered.cue, Self::draw(words, *tokens, fingerprint)),
            MockReply::Mixed { echo, random, words } => {
                let mut picked: Vec<&str> = source.split_whitespace().take(*echo).collect();
                picked.extend(Self::draw(words, *random, fingerprint));
                Self::answer(rendered.cue, picked)
            }
        }
    }

    fn draw<'a>(words: &'a [String], n: usize, fingerprint: &str) -> Vec<&'a str> {
        let mut rng = util::rng(u64::from_str_radix(&fingerprint[..16], 16).unwrap_or(0));
        (0..n).filter_map(|_| words.choose(&mut rng).map(String::as_str)).collect()
    }
}

impl LanguageModel for MockLm {
    fn complete(&self, request: &LmRequest) -> std::result::Result<LmResponse, LmError> {
        let system = request
            .messages
            .iter()
            .find(|m| m.role == "system")
            .map_or("", |m| m.content.as_str());
        let user = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map_or("", |m| m.content.as_str());
        let haystack = format!("{system}\n{user}");
        let fingerprint = request.fingerprint();
        let rendered = split_user(user);

        let default = MockReply::Echo {
            tokens: self.script.default_echo_tokens,
        };
        let rule = self
            .script
            .rules
            .iter()
            .find(|r| r.matches(&haystack, request, &fingerprint))
            .map_or(&default, |r| &r.reply);
        let text = self.reply(rule, &rendered, &fingerprint);

        let prompt_tokens = haystack.split_whitespace().count() as u64;
        let completion_tokens = text.split_whitespace().count() as u64;
        Ok(LmResponse {
            text,
            usage: Usage {
                prompt_tokens,
                completion_tokens,
                total_tokens: prompt_tokens + completion_tokens,
            },
            attempts: vec![AttemptRecord {
                status: Some(200),
                error: None,
            }],
        })
    }
}
