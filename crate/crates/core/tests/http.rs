//! The chat-completions client against a local socket server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use pathrank::lm::{ChatMessage, LanguageModel, LmError, LmRequest, OpenAiClient, RetryPolicy, UreqTransport};

struct Seen {
    request_line: String,
    headers: Vec<String>,
    body: String,
}

enum Reply {
    Status(u16, &'static str),
    Stall(Duration),
}

/// Serves one connection per scripted reply, then stops.
fn serve(replies: Vec<Reply>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for reply in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
                headers.push(line);
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let _ = tx.send(Seen {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: String::from_utf8(body).unwrap(),
            });
            match reply {
                Reply::Status(status, body) => {
                    let _ = write!(
                        stream,
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                }
                Reply::Stall(d) => thread::sleep(d),
            }
        }
    });
    (endpoint, rx)
}

fn client(endpoint: &str, timeout: Duration) -> OpenAiClient {
    OpenAiClient::new(endpoint, Box::new(UreqTransport::new(timeout)))
        .with_api_key(Some("sk-test".into()))
        .with_retry(RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(10),
            max_delay: Duration::from_millis(20),
        })
}

fn request() -> LmRequest {
    LmRequest {
        model: "gpt-3.5-turbo".into(),
        messages: vec![ChatMessage::user("Passage: the cat sat")],
        temperature: 0.0,
        max_tokens: 32,
        seed: Some(4),
    }
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Query: cat"}}],"usage":{"prompt_tokens":7,"completion_tokens":2,"total_tokens":9}}"#;

#[test]
fn retries_transient_statuses_then_parses() {
    let (endpoint, seen) = serve(vec![Reply::Status(503, "busy"), Reply::Status(200, OK)]);
    let response = client(&endpoint, Duration::from_secs(5)).complete(&request()).unwrap();
    assert_eq!(response.text, "Query: cat");
    assert_eq!(response.usage.total_tokens, 9);
    let statuses: Vec<Option<u16>> = response.attempts.iter().map(|a| a.status).collect();
    assert_eq!(statuses, [Some(503), Some(200)]);

    let first = seen.recv().unwrap();
    assert_eq!(first.request_line, "POST /v1/chat/completions HTTP/1.1");
    assert!(first.headers.iter().any(|h| h.eq_ignore_ascii_case("authorization: Bearer sk-test")));
    let body: serde_json::Value = serde_json::from_str(&first.body).unwrap();
    assert_eq!(body["model"], "gpt-3.5-turbo");
    assert_eq!(body["seed"], 4);
    assert_eq!(body["messages"][0]["content"], "Passage: the cat sat");
    assert_eq!(seen.recv().unwrap().body, first.body);
}

#[test]
fn authentication_failures_are_not_retried() {
    let (endpoint, seen) = serve(vec![Reply::Status(401, "bad key")]);
    let err = client(&endpoint, Duration::from_secs(5)).complete(&request()).unwrap_err();
    assert_eq!(
        err,
        LmError::Auth {
            status: 401,
            body: "bad key".into()
        }
    );
    assert_eq!(seen.iter().count(), 1);
}

#[test]
fn timeouts_exhaust_the_retry_budget() {
    let stall = Duration::from_millis(800);
    let (endpoint, _seen) = serve(vec![Reply::Stall(stall), Reply::Stall(stall), Reply::Stall(stall)]);
    let err = client(&endpoint, Duration::from_millis(200)).complete(&request()).unwrap_err();
    match err {
        LmError::RetriesExhausted {
            attempts, last_status, ..
        } => {
            assert_eq!(attempts, 3);
            assert_eq!(last_status, None);
        }
        other => panic!("unexpected {other}"),
    }
}
