//! Forced-completion prompts, the answer-prefix registry, and the transport
//! traits used to reach a text-completion endpoint and an embedding endpoint.
//!
//! The transport is a raw completion protocol: a prompt string goes in and a
//! sampled continuation with per-token logprobs and top-k alternatives comes
//! back. Forced answer completion splices `</think>` into the middle of a
//! generation, which a chat-message protocol cannot express.

mod http;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use http::{EndpointConfig, HttpClient};

use crate::error::{Error, Result};
use crate::trace::{normalize, ByteSpan, TaskKind};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const TOOL_CALL_CLOSE: &str = "</tool_call>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: usize,
    pub stop_sequences: Vec<String>,
    pub top_logprobs: usize,
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            max_tokens: 4096,
            stop_sequences: Vec::new(),
            top_logprobs: 20,
            seed: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config(format!("temperature {} < 0", self.temperature)));
        }
        if self.top_logprobs == 0 {
            return Err(Error::Config("top_logprobs must be at least 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn with_stops(&self, stops: &[&str]) -> Self {
        Self {
            stop_sequences: stops.iter().map(|s| s.to_string()).collect(),
            ..self.clone()
        }
    }

    pub fn with_max_tokens(&self, max_tokens: usize) -> Self {
        Self {
            max_tokens,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: Option<u64>) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// How the answer is read off the continuation after the prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// The answer is the first generated token.
    FirstToken,
    /// Read until the closing quote of a JSON string.
    ClosingQuote,
    /// Read until a closing quote or the closing tool-call tag.
    ClosingQuoteOrToolCall,
}

impl StopRule {
    pub fn stop_sequences(self) -> &'static [&'static str] {
        match self {
            StopRule::FirstToken => &[],
            StopRule::ClosingQuote => &["\""],
            StopRule::ClosingQuoteOrToolCall => &["\"", TOOL_CALL_CLOSE],
        }
    }
}

/// The text appended after `</think>` to elicit an answer, per task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnswerPrefix {
    pub task: TaskKind,
    pub text: &'static str,
    pub stop_rule: StopRule,
}

const MCQ_PREFIX: &str = "{\"answer\": \"";
const NUMERIC_PREFIX: &str = "\\boxed{";
const TOOL_PREFIX: &str = "<tool_call>{\"name\": \"";
const SEARCH_PREFIX: &str = "<tool_call>{\"name\": \"web_search\", \"arguments\": {\"query\": \"";

impl AnswerPrefix {
    pub fn for_task(task: TaskKind) -> Self {
        let (text, stop_rule) = match task {
            TaskKind::Mcq => (MCQ_PREFIX, StopRule::FirstToken),
            TaskKind::Numeric => (NUMERIC_PREFIX, StopRule::FirstToken),
            TaskKind::ToolSelection => (TOOL_PREFIX, StopRule::ClosingQuote),
            TaskKind::SearchQuery => (SEARCH_PREFIX, StopRule::ClosingQuoteOrToolCall),
        };
        Self { task, text, stop_rule }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedToken {
    pub text: String,
    /// Byte offset of the token within the completion text.
    pub offset: usize,
    pub logprob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub tokens: Vec<GeneratedToken>,
    /// Per position, up to `top_logprobs` `(token, logprob)` pairs sorted by
    /// descending logprob.
    pub top_alternatives: Vec<Vec<(String, f64)>>,
    pub finish: FinishReason,
}

/// A token as reported by an endpoint, before offsets are assigned.
#[derive(Debug, Clone)]
pub struct RawToken {
    pub text: String,
    pub logprob: f64,
    pub top: Vec<(String, f64)>,
}

impl CompletionResult {
    /// Assemble a result from the endpoint's `text` and token list.
    ///
    /// Offsets are recomputed from the token texts. Tokens past the end of
    /// `text` (a stop sequence the server stripped) are dropped and a token
    /// straddling the end is cut, so the kept token texts concatenate to
    /// exactly `text`.
    pub fn from_parts(text: String, raw: Vec<RawToken>, finish: FinishReason) -> Result<Self> {
        let mut tokens = Vec::with_capacity(raw.len());
        let mut top_alternatives = Vec::with_capacity(raw.len());
        let mut offset = 0;
        for tok in raw {
            if offset >= text.len() {
                break;
            }
            let end = (offset + tok.text.len()).min(text.len());
            let piece = text.get(offset..end).unwrap_or_default();
            if piece.is_empty() || !tok.text.starts_with(piece) {
                return Err(Error::Format(format!(
                    "token {:?} at byte {offset} does not match the completion text",
                    tok.text
                )));
            }
            let mut top = tok.top;
            sort_alternatives(&mut top);
            tokens.push(GeneratedToken {
                text: piece.to_owned(),
                offset,
                logprob: tok.logprob,
            });
            top_alternatives.push(top);
            offset = end;
        }
        if offset != text.len() {
            return Err(Error::Format(format!(
                "tokens cover {offset} of {} completion bytes",
                text.len()
            )));
        }
        Ok(Self {
            text,
            tokens,
            top_alternatives,
            finish,
        })
    }

    pub fn truncated(&self) -> bool {
        self.finish == FinishReason::Length
    }

    pub fn token_offsets(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.offset).collect()
    }

    /// Alternatives at the first generated position, falling back to the
    /// sampled token itself when the endpoint returned none.
    pub fn first_position(&self) -> Vec<(String, f64)> {
        match (self.top_alternatives.first(), self.tokens.first()) {
            (Some(top), _) if !top.is_empty() => top.clone(),
            (_, Some(tok)) => vec![(tok.text.clone(), tok.logprob)],
            _ => Vec::new(),
        }
    }
}

fn sort_alternatives(top: &mut [(String, f64)]) {
    top.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Something that samples continuations of a raw prompt.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<CompletionResult>;
}

/// Something that maps text to a (not necessarily normalised) vector.
pub trait EmbeddingBackend: Send + Sync {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>>;
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for &T {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<CompletionResult> {
        (**self).complete(prompt, params)
    }
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for &T {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>> {
        (**self).embed_raw(text)
    }
}

/// Embed `text` and L2-normalise, checking the run-wide dimension if given.
pub fn embed(backend: &dyn EmbeddingBackend, text: &str, dim: Option<usize>) -> Result<Vec<f64>> {
    let v = backend.embed_raw(text)?;
    if let Some(d) = dim {
        if v.len() != d {
            return Err(Error::Format(format!(
                "embedding endpoint returned dimension {}, expected {d}",
                v.len()
            )));
        }
    }
    normalize(v)
}

/// `C<think>R_1..R_i</think>P`.
pub fn render_prompt(
    context: &str,
    reasoning_text: &str,
    step_spans: &[ByteSpan],
    step: usize,
    prefix: &AnswerPrefix,
) -> Result<String> {
    if step > step_spans.len() {
        return Err(Error::StepOutOfRange {
            step,
            steps: step_spans.len(),
        });
    }
    let end = step.checked_sub(1).map_or(0, |j| step_spans[j].end);
    let think = reasoning_text
        .get(..end)
        .ok_or_else(|| Error::Contract(format!("step {step} ends outside the reasoning text")))?;
    let mut prompt =
        String::with_capacity(context.len() + THINK_OPEN.len() + think.len() + THINK_CLOSE.len() + prefix.text.len());
    prompt.push_str(context);
    prompt.push_str(THINK_OPEN);
    prompt.push_str(think);
    prompt.push_str(THINK_CLOSE);
    prompt.push_str(prefix.text);
    Ok(prompt)
}

/// Logprob of each candidate at the first generated position.
///
/// Candidates missing from the top-k map to negative infinity; if every
/// candidate is missing the call fails.
pub fn candidate_logprobs(
    backend: &dyn CompletionBackend,
    prompt: &str,
    candidates: &[String],
    params: &GenerationParams,
) -> Result<BTreeMap<String, f64>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidates"));
    }
    let result = backend.complete(prompt, &params.with_stops(&[]).with_max_tokens(1))?;
    let first = result.first_position();
    let mut out = BTreeMap::new();
    for c in candidates {
        let lp = first
            .iter()
            .filter(|(tok, _)| tok == c)
            .map(|&(_, lp)| lp)
            .fold(f64::NEG_INFINITY, f64::max);
        out.insert(c.clone(), lp);
    }
    if out.values().all(|lp| *lp == f64::NEG_INFINITY) {
        return Err(Error::Ambiguous {
            candidates: candidates.to_vec(),
        });
    }
    Ok(out)
}

/// Highest-scoring key; ties go to the lexicographically smallest.
pub fn argmax<'a, I>(scores: I) -> Option<&'a str>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let mut best: Option<(&str, f64)> = None;
    for (k, v) in scores {
        best = match best {
            Some((bk, bv)) if bv > v || (bv == v && bk <= k) => Some((bk, bv)),
            _ => Some((k, v)),
        };
    }
    best.map(|(k, _)| k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{segment, SegmentationRules};

    fn raw(text: &str, lp: f64) -> RawToken {
        RawToken {
            text: text.into(),
            logprob: lp,
            top: vec![],
        }
    }

    #[test]
    fn prompt_rendering() {
        let r = "S1. S2.";
        let spans = segment(r, &SegmentationRules::default());
        let p = AnswerPrefix::for_task(TaskKind::Mcq);
        assert_eq!(
            render_prompt("Q", r, &spans, 2, &p).unwrap(),
            "Q<think>S1. S2.</think>{\"answer\": \""
        );
        assert_eq!(
            render_prompt("Q", r, &spans, 0, &p).unwrap(),
            "Q<think></think>{\"answer\": \""
        );
        assert!(matches!(
            render_prompt("Q", r, &spans, 3, &p),
            Err(Error::StepOutOfRange { step: 3, steps: 2 })
        ));
    }

    #[test]
    fn prefixes_are_exact() {
        let text = |t| AnswerPrefix::for_task(t).text;
        assert_eq!(text(TaskKind::Mcq), r#"{"answer": ""#);
        assert_eq!(text(TaskKind::Numeric), r"\boxed{");
        assert_eq!(text(TaskKind::ToolSelection), r#"<tool_call>{"name": ""#);
        assert_eq!(
            text(TaskKind::SearchQuery),
            r#"<tool_call>{"name": "web_search", "arguments": {"query": ""#
        );
    }

    #[test]
    fn from_parts_assigns_offsets_and_cuts_stop_text() {
        let r = CompletionResult::from_parts(
            "ab. cd.".into(),
            vec![
                raw("ab", -0.1),
                raw(". ", -0.2),
                raw("cd", -0.3),
                raw(".</", -0.4),
                raw("think>", -0.5),
            ],
            FinishReason::Stop,
        )
        .unwrap();
        assert_eq!(r.token_offsets(), vec![0, 2, 4, 6]);
        assert_eq!(r.tokens[3].text, ".");
        assert_eq!(r.top_alternatives.len(), 4);

        let empty = CompletionResult::from_parts(String::new(), vec![raw("\"", -0.1)], FinishReason::Stop).unwrap();
        assert!(empty.tokens.is_empty());

        assert!(CompletionResult::from_parts("abc".into(), vec![raw("xy", 0.0)], FinishReason::Stop).is_err());
        assert!(CompletionResult::from_parts("abc".into(), vec![raw("ab", 0.0)], FinishReason::Stop).is_err());
    }

    #[test]
    fn argmax_breaks_ties_lexicographically() {
        assert_eq!(argmax([("B", -1.0), ("A", -1.0), ("C", -3.0)]), Some("A"));
        assert_eq!(argmax([("C", -0.5), ("A", -1.0)]), Some("C"));
        assert_eq!(argmax(std::iter::empty::<(&str, f64)>()), None);
    }
}
