//! Query-generation prompt template.
//!
//! Rendered layout:
//!
//! ```text
//! system: {instruction}
//! user:   {Field}: {passage}\n\nReasoning: Let's think step by step.\n{output_prefix}
//! ```
//!
//! With chain-of-thought disabled the reasoning line is omitted. `{Field}` is
//! `input_field_name` with its first letter capitalised ("Passage").

use serde::{Deserialize, Serialize};

use super::ChatMessage;
use crate::error::{Error, Result};
use crate::util;

pub const REASONING_CUE: &str = "Reasoning: Let's think step by step.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub instruction: String,
    #[serde(default = "default_field")]
    pub input_field_name: String,
    #[serde(default = "default_prefix")]
    pub output_prefix: String,
    #[serde(default = "default_true")]
    pub cot_enabled: bool,
}

fn default_field() -> String {
    "passage".into()
}

fn default_prefix() -> String {
    "Query:".into()
}

fn default_true() -> bool {
    true
}

impl PromptTemplate {
    pub fn new(instruction: impl Into<String>) -> Self {
        Self {
            instruction: instruction.into(),
            input_field_name: default_field(),
            output_prefix: default_prefix(),
            cot_enabled: true,
        }
    }

    pub fn with_output_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.output_prefix = prefix.into();
        self
    }

    pub fn with_cot(mut self, enabled: bool) -> Self {
        self.cot_enabled = enabled;
        self
    }

    /// Same scaffolding, different instruction.
    pub fn with_instruction(&self, instruction: impl Into<String>) -> Self {
        Self {
            instruction: instruction.into(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cot_enabled && self.output_prefix.trim().is_empty() {
            return Err(Error::InvalidConfig(
                "output_prefix must be non-empty when chain-of-thought is enabled".into(),
            ));
        }
        if self.input_field_name.trim().is_empty() {
            return Err(Error::InvalidConfig("input_field_name must be non-empty".into()));
        }
        Ok(())
    }

    pub fn field_label(&self) -> String {
        let mut chars = self.input_field_name.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        }
    }

    /// Short stable hash used to tie queries and log lines to a template.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).unwrap_or_default();
        util::sha256_hex(&bytes)[..16].to_string()
    }
}

pub fn render_prompt(template: &PromptTemplate, passage: &str) -> Vec<ChatMessage> {
    let label = template.field_label();
    let user = if template.cot_enabled {
        format!(
            "{label}: {passage}\n\n{REASONING_CUE}\n{}",
            template.output_prefix
        )
    } else {
        format!("{label}: {passage}\n\n{}", template.output_prefix)
    };
    vec![
        ChatMessage::system(template.instruction.clone()),
        ChatMessage::user(user),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseFlag {
    Parsed,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedQuery {
    pub text: String,
    pub flag: ParseFlag,
}

/// Extracts the query: the first line of whatever follows the last
/// occurrence of the output prefix. Without a prefix the whole completion is
/// used and flagged as a fallback.
pub fn parse_query(template: &PromptTemplate, completion: &str) -> Result<ParsedQuery> {
    let prefix = template.output_prefix.as_str();
    let (body, flag) = match (!prefix.is_empty())
        .then(|| completion.rfind(prefix))
        .flatten()
    {
        Some(at) => (&completion[at + prefix.len()..], ParseFlag::Parsed),
        None => (completion, ParseFlag::Fallback),
    };
    let text = match flag {
        ParseFlag::Parsed => body.trim().lines().next().unwrap_or("").trim(),
        ParseFlag::Fallback => body.trim(),
    };
    if text.is_empty() {
        return Err(Error::EmptyCompletion(format!(
            "nothing after {prefix:?} in completion"
        )));
    }
    Ok(ParsedQuery {
        text: text.to_string(),
        flag,
    })
}
