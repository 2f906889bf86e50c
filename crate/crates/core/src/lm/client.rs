//! OpenAI-compatible chat-completions client.
//!
//! `POST {endpoint}/v1/chat/completions` with `model`, `messages`,
//! `temperature`, `max_tokens` (and `seed` when set); the completion is read
//! from `choices[0].message.content`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{AttemptRecord, LanguageModel, LmError, LmRequest, LmResponse, Usage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Minimal blocking POST, so the retry logic can be driven by a scripted
/// transport in tests.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
    ) -> Result<HttpReply, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
    ) -> Result<HttpReply, String> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1` (1-based `attempt`).
    pub fn backoff(&self, attempt: usize) -> Duration {
        let factor = 1u32 << (attempt.saturating_sub(1)).min(20);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

fn is_retryable(status: u16) -> bool {
    matches!(status, 408 | 409 | 429) || status >= 500
}

struct Semaphore {
    permits: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cond.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cond.notify_one();
    }
}

pub struct OpenAiClient {
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    transport: Box<dyn HttpTransport>,
    in_flight: Semaphore,
}

impl OpenAiClient {
    pub fn new(endpoint: impl Into<String>, transport: Box<dyn HttpTransport>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            api_key: None,
            retry: RetryPolicy::default(),
            transport,
            in_flight: Semaphore::new(8),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key.filter(|k| !k.is_empty());
        self
    }

    /// Reads the key from an environment variable; unset means no
    /// Authorization header.
    pub fn with_api_key_env(self, var: &str) -> Self {
        self.with_api_key(std::env::var(var).ok())
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.in_flight = Semaphore::new(n);
        self
    }

    pub fn url(&self) -> String {
        format!("{}/v1/chat/completions", self.endpoint)
    }

    pub fn request_body(request: &LmRequest) -> Value {
        let mut body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn parse_reply(body: &str) -> Result<(String, Usage), LmError> {
        let v: Value =
            serde_json::from_str(body).map_err(|e| LmError::MalformedResponse(e.to_string()))?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                LmError::MalformedResponse("missing choices[0].message.content".into())
            })?
            .to_string();
        let count = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
        let usage = Usage {
            prompt_tokens: count("prompt_tokens"),
            completion_tokens: count("completion_tokens"),
            total_tokens: count("total_tokens"),
        };
        Ok((text, usage))
    }
}

impl LanguageModel for OpenAiClient {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError> {
        if self.retry.max_attempts == 0 {
            return Err(LmError::Config("retry budget must allow at least one attempt".into()));
        }
        let _permit = self.in_flight.acquire();
        let url = self.url();
        let body = Self::request_body(request).to_string();
        let headers: Vec<(String, String)> = self
            .api_key
            .iter()
            .map(|k| ("Authorization".to_string(), format!("Bearer {k}")))
            .collect();

        let mut attempts = Vec::new();
        loop {
            let n = attempts.len() + 1;
            match self.transport.post_json(&url, &headers, &body) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    attempts.push(AttemptRecord {
                        status: Some(reply.status),
                        error: None,
                    });
                    let (text, usage) = Self::parse_reply(&reply.body)?;
                    return Ok(LmResponse {
                        text,
                        usage,
                        attempts,
                    });
                }
                Ok(reply) if reply.status == 401 || reply.status == 403 => {
                    return Err(LmError::Auth {
                        status: reply.status,
                        body: reply.body,
                    });
                }
                Ok(reply) if !is_retryable(reply.status) => {
                    return Err(LmError::Rejected {
                        status: reply.status,
                        body: reply.body,
                    });
                }
                Ok(reply) => attempts.push(AttemptRecord {
                    status: Some(reply.status),
                    error: Some(reply.body),
                }),
                Err(e) => attempts.push(AttemptRecord {
                    status: None,
                    error: Some(e),
                }),
            }
            let last = attempts.last().expect("pushed above");
            tracing::warn!(attempt = n, status = ?last.status, "transient LM failure");
            if n >= self.retry.max_attempts {
                return Err(LmError::RetriesExhausted {
                    attempts: n,
                    last_status: last.status,
                    last_error: last.error.clone().unwrap_or_default(),
                });
            }
            std::thread::sleep(self.retry.backoff(n));
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;
    use std::sync::Arc;

    use super::*;
    use crate::lm::ChatMessage;

    /// `(url, headers, body)` of every request.
    type Seen = Arc<Mutex<Vec<(String, Vec<(String, String)>, String)>>>;

    struct Scripted {
        replies: Mutex<VecDeque<Result<HttpReply, String>>>,
        seen: Seen,
    }

    impl Scripted {
        fn new(replies: Vec<Result<HttpReply, String>>) -> (Self, Seen) {
            let seen = Arc::new(Mutex::new(Vec::new()));
            (
                Self {
                    replies: Mutex::new(replies.into()),
                    seen: seen.clone(),
                },
                seen,
            )
        }
    }

    impl HttpTransport for Scripted {
        fn post_json(&self, url: &str, headers: &[(String, String)], body: &str) -> Result<HttpReply, String> {
            self.seen
                .lock()
                .unwrap()
                .push((url.to_string(), headers.to_vec(), body.to_string()));
            self.replies.lock().unwrap().pop_front().expect("script exhausted")
        }
    }

    fn ok(text: &str) -> Result<HttpReply, String> {
        Ok(HttpReply {
            status: 200,
            body: json!({
                "choices": [{"message": {"role": "assistant", "content": text}}],
                "usage": {"prompt_tokens": 3, "completion_tokens": 2, "total_tokens": 5}
            })
            .to_string(),
        })
    }

    fn status(code: u16) -> Result<HttpReply, String> {
        Ok(HttpReply {
            status: code,
            body: format!("status {code}"),
        })
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(2),
        }
    }

    fn request() -> LmRequest {
        LmRequest {
            model: "m".into(),
            messages: vec![ChatMessage::system("s"), ChatMessage::user("u")],
            temperature: 0.0,
            max_tokens: 16,
            seed: Some(7),
        }
    }

    #[test]
    fn retries_transient_failures() {
        let (t, seen) = Scripted::new(vec![status(503), Err("reset".into()), ok("hello")]);
        let client = OpenAiClient::new("http://x/", Box::new(t))
            .with_api_key(Some("k".into()))
            .with_retry(fast());
        let resp = client.complete(&request()).unwrap();
        assert_eq!(resp.text, "hello");
        assert_eq!(resp.attempts.len(), 3);
        assert_eq!(resp.usage.total_tokens, 5);
        let seen = seen.lock().unwrap();
        assert_eq!(seen[0].0, "http://x/v1/chat/completions");
        assert!(seen[0].1.contains(&("Authorization".into(), "Bearer k".into())));
        let body: Value = serde_json::from_str(&seen[0].2).unwrap();
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["max_tokens"], 16);
        assert_eq!(body["seed"], 7);
    }

    #[test]
    fn budget_exhaustion_carries_last_status() {
        let (t, _) = Scripted::new(vec![status(500), status(502), status(429)]);
        let client = OpenAiClient::new("http://x", Box::new(t)).with_retry(fast());
        match client.complete(&request()).unwrap_err() {
            LmError::RetriesExhausted {
                attempts,
                last_status,
                ..
            } => {
                assert_eq!(attempts, 3);
                assert_eq!(last_status, Some(429));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn auth_failure_is_immediate() {
        let (t, seen) = Scripted::new(vec![status(401), ok("never")]);
        let client = OpenAiClient::new("http://x", Box::new(t)).with_retry(fast());
        assert!(matches!(client.complete(&request()), Err(LmError::Auth { status: 401, .. })));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (t, _) = Scripted::new(vec![status(400)]);
        let client = OpenAiClient::new("http://x", Box::new(t)).with_retry(fast());
        assert!(matches!(client.complete(&request()), Err(LmError::Rejected { status: 400, .. })));
    }

    #[test]
    fn backoff_doubles_up_to_cap() {
        let p = RetryPolicy {
            max_attempts: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
        };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(350));
    }

    #[test]
    fn malformed_body_is_an_error() {
        let (t, _) = Scripted::new(vec![Ok(HttpReply {
            status: 200,
            body: "{\"choices\": []}".into(),
        })]);
        let client = OpenAiClient::new("http://x", Box::new(t)).with_retry(fast());
        assert!(matches!(client.complete(&request()), Err(LmError::MalformedResponse(_))));
    }
}
