use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CompletionBackend, CompletionResult, EmbeddingBackend, FinishReason, GenerationParams, RawToken};
use crate::error::{Error, Result};

/// Connection settings for the completion and embedding endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub completion_url: String,
    pub embedding_url: Option<String>,
    /// Model name forwarded in the request body, for servers that need it.
    pub model: Option<String>,
    /// Name of the environment variable holding a bearer token.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_inflight: usize,
    pub retries: u32,
    pub backoff_ms: u64,
    pub embedding_dim: Option<usize>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            completion_url: "http://127.0.0.1:8000/v1/completions".into(),
            embedding_url: None,
            model: None,
            api_key_env: None,
            timeout_secs: 300,
            max_inflight: 8,
            retries: 3,
            backoff_ms: 250,
            embedding_dim: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_inflight == 0 {
            return Err(Error::Config("max_inflight must be at least 1".into()));
        }
        if self.completion_url.is_empty() {
            return Err(Error::Config("completion_url is empty".into()));
        }
        Ok(())
    }
}

struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.cv.wait_while(self.free.lock().unwrap(), |n| *n == 0).unwrap();
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
        out
    }
}

/// Blocking HTTP client for OpenAI-style `/v1/completions` servers and a
/// simple `{input} -> {embedding}` embedding service.
///
/// At most `max_inflight` requests are in flight across all threads sharing
/// the client.
pub struct HttpClient {
    cfg: EndpointConfig,
    agent: ureq::Agent,
    auth: Option<String>,
    gate: Gate,
}

impl HttpClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        cfg.validate()?;
        let auth = match &cfg.api_key_env {
            Some(var) => Some(format!(
                "Bearer {}",
                std::env::var(var).map_err(|_| Error::Config(format!("environment variable {var} is not set")))?
            )),
            None => None,
        };
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build();
        let gate = Gate::new(cfg.max_inflight);
        Ok(Self { cfg, agent, auth, gate })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn post(&self, url: &str, body: &Value) -> Result<Value> {
        let attempts = self.cfg.retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(self.cfg.backoff_ms << (attempt - 1).min(16)));
            }
            match self.gate.run(|| self.post_once(url, body)) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(match last {
            Some(Error::Transport { message, .. }) => Error::Transport { attempts, message },
            Some(e) => e,
            None => unreachable!("at least one attempt is made"),
        })
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value> {
        let mut req = self.agent.post(url);
        if let Some(auth) = &self.auth {
            req = req.set("Authorization", auth);
        }
        let resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(status, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                return Err(Error::Http { status, body });
            }
            Err(ureq::Error::Transport(t)) => {
                return Err(Error::Transport {
                    attempts: 1,
                    message: t.to_string(),
                })
            }
        };
        // The full body is read before anything is parsed.
        let text = resp.into_string().map_err(|e| Error::Transport {
            attempts: 1,
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("response is not JSON: {e}")))
    }
}

/// Request body for a legacy completion call.
pub(crate) fn completion_request(prompt: &str, params: &GenerationParams, model: Option<&str>) -> Value {
    let mut body = json!({
        "prompt": prompt,
        "max_tokens": params.max_tokens,
        "temperature": params.temperature,
        "stop": params.stop_sequences,
        "logprobs": params.top_logprobs,
    });
    if let Some(seed) = params.seed {
        body["seed"] = json!(seed);
    }
    if let Some(model) = model {
        body["model"] = json!(model);
    }
    body
}

/// Parse `choices[0]` of a legacy completion response.
pub(crate) fn parse_completion(v: &Value) -> Result<CompletionResult> {
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| Error::Format("response has no choices".into()))?;
    let text = choice
        .get("text")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Format("choice has no text".into()))?
        .to_owned();
    let finish = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Length,
        _ => FinishReason::Stop,
    };
    let Some(lp) = choice.get("logprobs").filter(|l| !l.is_null()) else {
        return Err(Error::Capability("response carries no logprobs".into()));
    };
    let tokens = lp.get("tokens").and_then(Value::as_array);
    let token_lps = lp.get("token_logprobs").and_then(Value::as_array);
    let (Some(tokens), Some(token_lps)) = (tokens, token_lps) else {
        return Err(Error::Capability("logprobs lack tokens or token_logprobs".into()));
    };
    let tops = lp.get("top_logprobs").and_then(Value::as_array);
    let mut raw = Vec::with_capacity(tokens.len());
    for (i, tok) in tokens.iter().enumerate() {
        let text = tok
            .as_str()
            .ok_or_else(|| Error::Format(format!("token {i} is not a string")))?;
        let logprob = token_lps.get(i).and_then(Value::as_f64).unwrap_or(f64::NEG_INFINITY);
        let top = tops
            .and_then(|t| t.get(i))
            .and_then(Value::as_object)
            .map(|m| {
                m.iter()
                    .filter_map(|(k, v)| v.as_f64().map(|lp| (k.clone(), lp)))
                    .collect()
            })
            .unwrap_or_default();
        raw.push(RawToken {
            text: text.to_owned(),
            logprob,
            top,
        });
    }
    CompletionResult::from_parts(text, raw, finish)
}

/// Accepts `{"embedding": [...]}` or the `{"data": [{"embedding": [...]}]}` form.
pub(crate) fn parse_embedding(v: &Value) -> Result<Vec<f64>> {
    let arr = v
        .get("embedding")
        .or_else(|| v.get("data").and_then(|d| d.get(0)).and_then(|d| d.get("embedding")))
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Format("response has no embedding array".into()))?;
    arr.iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| Error::Format("embedding entry is not a number".into()))
        })
        .collect()
}

impl CompletionBackend for HttpClient {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<CompletionResult> {
        params.validate()?;
        let body = completion_request(prompt, params, self.cfg.model.as_deref());
        let resp = self.post(&self.cfg.completion_url, &body)?;
        parse_completion(&resp)
    }
}

impl EmbeddingBackend for HttpClient {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>> {
        let url = self
            .cfg
            .embedding_url
            .as_deref()
            .ok_or_else(|| Error::Config("no embedding_url configured".into()))?;
        let mut body = json!({ "input": text });
        if let Some(model) = &self.cfg.model {
            body["model"] = json!(model);
        }
        let v = parse_embedding(&self.post(url, &body)?)?;
        if let Some(d) = self.cfg.embedding_dim {
            if v.len() != d {
                return Err(Error::Format(format!(
                    "embedding endpoint returned dimension {}, expected {d}",
                    v.len()
                )));
            }
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_legacy_completion() {
        let v = json!({
            "choices": [{
                "text": "B",
                "finish_reason": "length",
                "logprobs": {
                    "tokens": ["B"],
                    "token_logprobs": [-0.2],
                    "top_logprobs": [{"A": -1.9, "B": -0.2}]
                }
            }]
        });
        let r = parse_completion(&v).unwrap();
        assert_eq!(r.text, "B");
        assert!(r.truncated());
        assert_eq!(
            r.top_alternatives[0],
            vec![("B".to_string(), -0.2), ("A".to_string(), -1.9)]
        );
    }

    #[test]
    fn missing_logprobs_is_a_capability_error() {
        let v = json!({"choices": [{"text": "B", "finish_reason": "stop"}]});
        assert!(matches!(parse_completion(&v), Err(Error::Capability(_))));
    }

    #[test]
    fn embedding_shapes() {
        assert_eq!(
            parse_embedding(&json!({"embedding": [1.0, 2.0]})).unwrap(),
            vec![1.0, 2.0]
        );
        assert_eq!(
            parse_embedding(&json!({"data": [{"embedding": [3.0]}]})).unwrap(),
            vec![3.0]
        );
        assert!(parse_embedding(&json!({"vector": []})).is_err());
    }

    #[test]
    fn request_body_fields() {
        let p = GenerationParams {
            seed: Some(7),
            ..GenerationParams::default()
        }
        .with_stops(&["</think>"]);
        let b = completion_request("Q<think>", &p, Some("m"));
        assert_eq!(b["prompt"], "Q<think>");
        assert_eq!(b["stop"], json!(["</think>"]));
        assert_eq!(b["logprobs"], 20);
        assert_eq!(b["seed"], 7);
        assert_eq!(b["model"], "m");
    }
}
