//! A scripted stand-in for a completion and embedding endpoint.
//!
//! The same fixture drives an in-process backend ([`ScriptedModel`]) and a
//! real HTTP server ([`MockServer`]) that speaks the wire format
//! [`HttpClient`](crate::client::HttpClient) expects.
//!
//! # Fixture format
//!
//! A JSON document:
//!
//! ```json
//! {
//!   "completions": [
//!     {
//!       "match": {"ends_with": "Q<think>"},
//!       "tokens": [
//!         {"text": "ab", "logprob": -0.1},
//!         {"text": ". ", "logprob": -0.2, "top": [[". ", -0.2], ["!", -3.0]]}
//!       ]
//!     }
//!   ],
//!   "embeddings": [{"text": "q", "embedding": [0.6, 0.8]}],
//!   "hash_embedding_dim": 8,
//!   "fail_first": 0
//! }
//! ```
//!
//! A completion rule matches when every given condition (`starts_with`,
//! `ends_with`, `contains`) holds for the prompt; the first match wins. Its
//! tokens are replayed in order until a stop sequence appears in the text
//! (finish `stop`, text cut before the stop sequence), `max_tokens` is reached
//! (finish `length`), or the script ends (finish `stop`). `top` defaults to the
//! token itself. Rules with `"omit_logprobs": true` answer without logprobs.
//!
//! Embeddings are looked up by exact text; unknown texts get a deterministic
//! hash-derived vector when `hash_embedding_dim` is set. The first
//! `fail_first` HTTP requests are answered with 503.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::client::{CompletionBackend, CompletionResult, EmbeddingBackend, FinishReason, GenerationParams, RawToken};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts_with: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ends_with: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
}

impl PromptMatch {
    pub fn ends_with(s: impl Into<String>) -> Self {
        Self {
            ends_with: Some(s.into()),
            ..Self::default()
        }
    }

    fn matches(&self, prompt: &str) -> bool {
        self.starts_with.as_deref().is_none_or(|s| prompt.starts_with(s))
            && self.ends_with.as_deref().is_none_or(|s| prompt.ends_with(s))
            && self.contains.as_deref().is_none_or(|s| prompt.contains(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedToken {
    pub text: String,
    #[serde(default)]
    pub logprob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top: Option<Vec<(String, f64)>>,
}

impl ScriptedToken {
    pub fn new(text: impl Into<String>, logprob: f64) -> Self {
        Self {
            text: text.into(),
            logprob,
            top: None,
        }
    }

    pub fn with_top(mut self, top: Vec<(&str, f64)>) -> Self {
        self.top = Some(top.into_iter().map(|(t, lp)| (t.to_owned(), lp)).collect());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionRule {
    #[serde(rename = "match")]
    pub when: PromptMatch,
    pub tokens: Vec<ScriptedToken>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub omit_logprobs: bool,
}

impl CompletionRule {
    pub fn new(when: PromptMatch, tokens: Vec<ScriptedToken>) -> Self {
        Self {
            when,
            tokens,
            omit_logprobs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedEmbedding {
    pub text: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockFixture {
    #[serde(default)]
    pub completions: Vec<CompletionRule>,
    #[serde(default)]
    pub embeddings: Vec<FixedEmbedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash_embedding_dim: Option<usize>,
    #[serde(default)]
    pub fail_first: usize,
}

impl MockFixture {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Replay outcome before it is turned into a [`CompletionResult`] or a wire
/// response.
struct Replay {
    text: String,
    tokens: Vec<RawToken>,
    finish: FinishReason,
    omit_logprobs: bool,
}

/// In-process backend driven by a [`MockFixture`].
#[derive(Debug, Clone, Default)]
pub struct ScriptedModel {
    fixture: MockFixture,
}

impl ScriptedModel {
    pub fn new(fixture: MockFixture) -> Self {
        Self { fixture }
    }

    pub fn fixture(&self) -> &MockFixture {
        &self.fixture
    }

    fn replay(&self, prompt: &str, params: &GenerationParams) -> Result<Replay> {
        let rule = self
            .fixture
            .completions
            .iter()
            .find(|r| r.when.matches(prompt))
            .ok_or_else(|| Error::Http {
                status: 404,
                body: format!("no scripted completion for prompt ending {:?}", tail(prompt)),
            })?;

        let mut text = String::new();
        let mut tokens = Vec::new();
        let mut finish = FinishReason::Stop;
        for tok in &rule.tokens {
            if tokens.len() == params.max_tokens {
                finish = FinishReason::Length;
                break;
            }
            let top = tok
                .top
                .clone()
                .unwrap_or_else(|| vec![(tok.text.clone(), tok.logprob)])
                .into_iter()
                .take(params.top_logprobs)
                .collect();
            tokens.push(RawToken {
                text: tok.text.clone(),
                logprob: tok.logprob,
                top,
            });
            text.push_str(&tok.text);
            let hit = params
                .stop_sequences
                .iter()
                .filter(|s| !s.is_empty())
                .filter_map(|s| text.find(s.as_str()))
                .min();
            if let Some(at) = hit {
                text.truncate(at);
                break;
            }
        }
        Ok(Replay {
            text,
            tokens,
            finish,
            omit_logprobs: rule.omit_logprobs,
        })
    }

    fn embedding_for(&self, text: &str) -> Result<Vec<f64>> {
        if let Some(e) = self.fixture.embeddings.iter().find(|e| e.text == text) {
            return Ok(e.embedding.clone());
        }
        match self.fixture.hash_embedding_dim {
            Some(dim) => Ok(hash_embedding(text, dim)),
            None => Err(Error::Http {
                status: 404,
                body: format!("no scripted embedding for {text:?}"),
            }),
        }
    }
}

fn tail(s: &str) -> &str {
    let mut start = s.len().saturating_sub(60);
    while !s.is_char_boundary(start) {
        start += 1;
    }
    &s[start..]
}

/// Deterministic pseudo-embedding: SHA-256 counter blocks mapped to [-1, 1].
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    let mut block = 0u32;
    while out.len() < dim {
        let digest = Sha256::new()
            .chain_update(block.to_le_bytes())
            .chain_update(text.as_bytes())
            .finalize();
        for pair in digest.chunks_exact(2) {
            if out.len() == dim {
                break;
            }
            let x = u16::from_le_bytes([pair[0], pair[1]]) as f64;
            out.push(x / 32767.5 - 1.0);
        }
        block += 1;
    }
    out
}

impl CompletionBackend for ScriptedModel {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<CompletionResult> {
        let r = self.replay(prompt, params)?;
        if r.omit_logprobs {
            return Err(Error::Capability("response carries no logprobs".into()));
        }
        CompletionResult::from_parts(r.text, r.tokens, r.finish)
    }
}

impl EmbeddingBackend for ScriptedModel {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>> {
        self.embedding_for(text)
    }
}

/// HTTP server on `127.0.0.1` serving a [`MockFixture`].
///
/// `POST /v1/completions` answers in the legacy completion format;
/// `POST /embed` answers `{"embedding": [...]}`. The server stops when
/// dropped.
pub struct MockServer {
    server: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
    requests: Arc<AtomicUsize>,
    port: u16,
}

impl MockServer {
    pub fn start(fixture: MockFixture) -> Result<Self> {
        let server =
            tiny_http::Server::http("127.0.0.1:0").map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| Error::Io(std::io::Error::other("mock server has no IP address")))?;
        let server = Arc::new(server);
        let requests = Arc::new(AtomicUsize::new(0));
        let model = Arc::new(ScriptedModel::new(fixture));
        let workers = (0..4)
            .map(|_| {
                let server = Arc::clone(&server);
                let requests = Arc::clone(&requests);
                let model = Arc::clone(&model);
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        let n = requests.fetch_add(1, Ordering::SeqCst);
                        serve(&model, req, n);
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            workers,
            requests,
            port,
        })
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn completion_url(&self) -> String {
        format!("http://127.0.0.1:{}/v1/completions", self.port)
    }

    pub fn embedding_url(&self) -> String {
        format!("http://127.0.0.1:{}/embed", self.port)
    }

    /// Number of requests received so far, including failed ones.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn serve(model: &ScriptedModel, mut req: tiny_http::Request, n: usize) {
    let mut body = String::new();
    let (status, payload) = if n < model.fixture.fail_first {
        (503, json!({"error": "scripted failure"}))
    } else if req.as_reader().read_to_string(&mut body).is_err() {
        (400, json!({"error": "unreadable body"}))
    } else {
        match serde_json::from_str::<Value>(&body) {
            Err(e) => (400, json!({"error": e.to_string()})),
            Ok(v) => match req.url() {
                "/v1/completions" => completion_response(model, &v),
                "/embed" => embedding_response(model, &v),
                _ => (404, json!({"error": "unknown path"})),
            },
        }
    };
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let resp = tiny_http::Response::from_string(payload.to_string())
        .with_status_code(status)
        .with_header(header);
    let _ = req.respond(resp);
}

fn completion_response(model: &ScriptedModel, v: &Value) -> (u16, Value) {
    let Some(prompt) = v.get("prompt").and_then(Value::as_str) else {
        return (400, json!({"error": "missing prompt"}));
    };
    let params = GenerationParams {
        temperature: v.get("temperature").and_then(Value::as_f64).unwrap_or(1.0),
        max_tokens: v.get("max_tokens").and_then(Value::as_u64).unwrap_or(16) as usize,
        stop_sequences: v
            .get("stop")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|s| s.as_str().map(str::to_owned)).collect())
            .unwrap_or_default(),
        top_logprobs: v.get("logprobs").and_then(Value::as_u64).unwrap_or(1) as usize,
        seed: v.get("seed").and_then(Value::as_u64),
    };
    let r = match model.replay(prompt, &params) {
        Ok(r) => r,
        Err(Error::Http { status, body }) => return (status, json!({ "error": body })),
        Err(e) => return (500, json!({ "error": e.to_string() })),
    };
    let finish = match r.finish {
        FinishReason::Stop => "stop",
        FinishReason::Length => "length",
    };
    let mut choice = json!({ "index": 0, "text": r.text, "finish_reason": finish });
    if !r.omit_logprobs {
        let top: Vec<Value> = r
            .tokens
            .iter()
            .map(|t| {
                let m: serde_json::Map<String, Value> = t.top.iter().map(|(k, lp)| (k.clone(), json!(lp))).collect();
                Value::Object(m)
            })
            .collect();
        choice["logprobs"] = json!({
            "tokens": r.tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>(),
            "token_logprobs": r.tokens.iter().map(|t| t.logprob).collect::<Vec<_>>(),
            "top_logprobs": top,
        });
    }
    (200, json!({ "object": "text_completion", "choices": [choice] }))
}

fn embedding_response(model: &ScriptedModel, v: &Value) -> (u16, Value) {
    let Some(text) = v.get("input").and_then(Value::as_str) else {
        return (400, json!({"error": "missing input"}));
    };
    match model.embedding_for(text) {
        Ok(e) => (200, json!({ "embedding": e })),
        Err(Error::Http { status, body }) => (status, json!({ "error": body })),
        Err(e) => (500, json!({ "error": e.to_string() })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> MockFixture {
        MockFixture {
            completions: vec![CompletionRule::new(
                PromptMatch::ends_with("Q<think>"),
                ["ab", ". ", "cd", ".", "</think>", "x"]
                    .into_iter()
                    .map(|t| ScriptedToken::new(t, -0.5))
                    .collect(),
            )],
            ..MockFixture::default()
        }
    }

    #[test]
    fn replay_honours_stop_and_budget() {
        let m = ScriptedModel::new(fixture());
        let p = GenerationParams::default().with_stops(&["</think>"]);
        let r = m.complete("Q<think>", &p).unwrap();
        assert_eq!(r.text, "ab. cd.");
        assert_eq!(r.finish, FinishReason::Stop);
        assert_eq!(r.token_offsets(), vec![0, 2, 4, 6]);

        let r = m.complete("Q<think>", &p.with_max_tokens(2)).unwrap();
        assert_eq!(r.text, "ab. ");
        assert!(r.truncated());

        assert!(matches!(m.complete("nope", &p), Err(Error::Http { status: 404, .. })));
    }

    #[test]
    fn hash_embeddings_are_stable() {
        let a = hash_embedding("hello", 10);
        assert_eq!(a.len(), 10);
        assert_eq!(a, hash_embedding("hello", 10));
        assert_ne!(a, hash_embedding("hellp", 10));
        assert!(a.iter().all(|x| (-1.0..=1.0).contains(x)));
    }
}
