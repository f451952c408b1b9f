//! Domain types shared across the crate: tasks, answer labels, trace records
//! and answer trajectories.
//!
//! Everything here is a plain value. Serialization is handled by
//! [`crate::datastore`].

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Tolerance on the L2 norm of query embeddings.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Mcq,
    Numeric,
    SearchQuery,
    ToolSelection,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Mcq,
        TaskKind::Numeric,
        TaskKind::SearchQuery,
        TaskKind::ToolSelection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Mcq => "mcq",
            TaskKind::Numeric => "numeric",
            TaskKind::SearchQuery => "search_query",
            TaskKind::ToolSelection => "tool_selection",
        }
    }

    /// Accuracy-scored tasks have a gold label; search queries are scored by
    /// cosine similarity to the full-generation query instead.
    pub fn has_gold(self) -> bool {
        !matches!(self, TaskKind::SearchQuery)
    }

    /// Wrap a plain answer string in this task's label variant.
    ///
    /// Returns `None` for [`TaskKind::SearchQuery`], whose labels need an
    /// embedding.
    pub fn label_from_text(self, text: &str) -> Option<AnswerLabel> {
        match self {
            TaskKind::Mcq => Some(AnswerLabel::Choice { label: text.to_owned() }),
            TaskKind::Numeric => Some(AnswerLabel::Token { text: text.to_owned() }),
            TaskKind::ToolSelection => Some(AnswerLabel::Tool { name: text.to_owned() }),
            TaskKind::SearchQuery => None,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown task kind {s:?}")))
    }
}

/// A per-step answer. Which variant is used is fixed by the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AnswerLabel {
    Choice { label: String },
    Token { text: String },
    Tool { name: String },
    Query { text: String, embedding: Vec<f64> },
}

impl AnswerLabel {
    /// Build a query label, L2-normalising the embedding.
    pub fn query(text: impl Into<String>, embedding: Vec<f64>) -> Result<Self> {
        Ok(AnswerLabel::Query {
            text: text.into(),
            embedding: normalize(embedding)?,
        })
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            AnswerLabel::Choice { .. } => "choice",
            AnswerLabel::Token { .. } => "token",
            AnswerLabel::Tool { .. } => "tool",
            AnswerLabel::Query { .. } => "query",
        }
    }

    /// The answer's surface text.
    pub fn text(&self) -> &str {
        match self {
            AnswerLabel::Choice { label } => label,
            AnswerLabel::Token { text } => text,
            AnswerLabel::Tool { name } => name,
            AnswerLabel::Query { text, .. } => text,
        }
    }

    pub fn embedding(&self) -> Option<&[f64]> {
        match self {
            AnswerLabel::Query { embedding, .. } => Some(embedding),
            _ => None,
        }
    }

    /// Whether this label belongs to `task`.
    pub fn matches_task(&self, task: TaskKind) -> bool {
        matches!(
            (self, task),
            (AnswerLabel::Choice { .. }, TaskKind::Mcq)
                | (AnswerLabel::Token { .. }, TaskKind::Numeric)
                | (AnswerLabel::Tool { .. }, TaskKind::ToolSelection)
                | (AnswerLabel::Query { .. }, TaskKind::SearchQuery)
        )
    }

    /// Check the unit-norm invariant (and dimension, when given) for query labels.
    pub fn check_embedding(&self, dim: Option<usize>) -> Result<()> {
        let Some(e) = self.embedding() else {
            return Ok(());
        };
        if let Some(d) = dim {
            if e.len() != d {
                return Err(Error::Format(format!(
                    "embedding has dimension {}, expected {d}",
                    e.len()
                )));
            }
        }
        let norm = l2_norm(e);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Format(format!("embedding norm {norm} is not 1")));
        }
        Ok(())
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scale `v` to unit L2 norm. A zero vector cannot be normalised.
pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = l2_norm(&v);
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::Format(format!("cannot normalise embedding with norm {norm}")));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceConfig {
    /// Cosine threshold for query equivalence.
    pub gamma: f64,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        Self { gamma: 0.9 }
    }
}

impl EquivalenceConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma {gamma} outside [0, 1]")));
        }
        Ok(Self { gamma })
    }
}

/// Answer equivalence: exact string equality for discrete labels, cosine
/// `>= gamma` for queries.
///
/// Query equivalence is a threshold relation and is not transitive.
pub fn equivalent(a: &AnswerLabel, b: &AnswerLabel, cfg: &EquivalenceConfig) -> Result<bool> {
    use AnswerLabel::*;
    match (a, b) {
        (Choice { label: x }, Choice { label: y }) => Ok(x == y),
        (Token { text: x }, Token { text: y }) => Ok(x == y),
        (Tool { name: x }, Tool { name: y }) => Ok(x == y),
        (Query { embedding: x, .. }, Query { embedding: y, .. }) => {
            if x.len() != y.len() {
                return Err(Error::Contract(format!(
                    "embedding dimensions differ ({} vs {})",
                    x.len(),
                    y.len()
                )));
            }
            Ok(x == y || dot(x, y) >= cfg.gamma)
        }
        _ => Err(Error::Contract(format!(
            "cannot compare a {} label with a {} label",
            a.variant_name(),
            b.variant_name()
        ))),
    }
}

/// Half-open byte range into a trace's reasoning text. Serialised as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct ByteSpan {
    pub start: usize,
    pub end: usize,
}

impl ByteSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

impl From<(usize, usize)> for ByteSpan {
    fn from((start, end): (usize, usize)) -> Self {
        Self { start, end }
    }
}

impl From<ByteSpan> for (usize, usize) {
    fn from(s: ByteSpan) -> Self {
        (s.start, s.end)
    }
}

impl From<Range<usize>> for ByteSpan {
    fn from(r: Range<usize>) -> Self {
        Self::new(r.start, r.end)
    }
}

/// Flag set on traces whose reasoning hit the token budget.
pub const FLAG_TRUNCATED: &str = "truncated";
/// Flag set when the final answer names a tool outside the declared list.
pub const FLAG_INVALID_TOOL: &str = "invalid_tool";

/// One example's full generation: prompt context, reasoning, step spans,
/// token offsets and answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: String,
    pub task: TaskKind,
    pub context: String,
    pub reasoning_text: String,
    pub step_spans: Vec<ByteSpan>,
    pub token_offsets: Vec<usize>,
    pub final_answer: Option<AnswerLabel>,
    pub gold: Option<AnswerLabel>,
    pub options: Option<Vec<String>>,
    pub tools: Option<Vec<String>>,
    #[serde(default)]
    pub flags: Vec<String>,
    /// Keys this crate does not know about, preserved on round trip.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl TraceRecord {
    pub fn step_count(&self) -> usize {
        self.step_spans.len()
    }

    pub fn token_count(&self) -> usize {
        self.token_offsets.len()
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    pub fn is_truncated(&self) -> bool {
        self.has_flag(FLAG_TRUNCATED)
    }

    /// Text of step `i` (1-based, matching trajectory indexing).
    pub fn step_text(&self, i: usize) -> Option<&str> {
        let span = self.step_spans.get(i.checked_sub(1)?)?;
        self.reasoning_text.get(span.range())
    }

    /// Check every structural invariant of the record.
    pub fn validate(&self) -> Result<()> {
        let len = self.reasoning_text.len();
        let bad = |msg: String| Err(Error::Data(format!("trace {}: {msg}", self.id)));

        let mut expected_start = 0;
        for (j, s) in self.step_spans.iter().enumerate() {
            if s.start != expected_start || s.end < s.start {
                return bad(format!("step span {j} {:?} is not contiguous", s));
            }
            if !self.reasoning_text.is_char_boundary(s.end) || s.end > len {
                return bad(format!("step span {j} ends off a character boundary"));
            }
            expected_start = s.end;
        }
        if expected_start != len {
            return bad(format!("step spans cover {expected_start} of {len} reasoning bytes"));
        }

        if let Some(&first) = self.token_offsets.first() {
            if first != 0 {
                return bad("first token offset is not 0".into());
            }
        }
        if self.token_offsets.windows(2).any(|w| w[0] >= w[1]) {
            return bad("token offsets are not strictly increasing".into());
        }
        if self.token_offsets.last().is_some_and(|&o| o >= len) {
            return bad("token offset past end of reasoning text".into());
        }
        for (j, s) in self.step_spans.iter().enumerate() {
            if s.end != len && self.token_offsets.binary_search(&s.end).is_err() {
                return bad(format!("step span {j} splits a token"));
            }
        }

        for (name, label) in [("final_answer", &self.final_answer), ("gold", &self.gold)] {
            if let Some(label) = label {
                if !label.matches_task(self.task) {
                    return bad(format!(
                        "{name} is a {} label for a {} task",
                        label.variant_name(),
                        self.task
                    ));
                }
                label.check_embedding(None)?;
            }
        }
        if let (Some(AnswerLabel::Choice { label }), Some(options)) = (&self.gold, &self.options) {
            if !options.contains(label) {
                return bad(format!("gold option {label:?} not among {options:?}"));
            }
        }
        Ok(())
    }
}

/// Forced answers `A_0..A_n` with the cumulative reasoning-token counts
/// `T_0..T_n` at each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerTrajectory {
    pub trace_id: String,
    pub labels: Vec<AnswerLabel>,
    pub cum_tokens: Vec<usize>,
    /// Steps whose extracted answer fell outside the declared answer space.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub invalid_steps: Vec<usize>,
}

impl AnswerTrajectory {
    pub fn new(trace_id: impl Into<String>, labels: Vec<AnswerLabel>, cum_tokens: Vec<usize>) -> Result<Self> {
        let t = Self {
            trace_id: trace_id.into(),
            labels,
            cum_tokens,
            invalid_steps: Vec::new(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Number of reasoning steps `n`.
    pub fn steps(&self) -> usize {
        self.labels.len().saturating_sub(1)
    }

    pub fn total_tokens(&self) -> usize {
        self.cum_tokens.last().copied().unwrap_or(0)
    }

    pub fn last_label(&self) -> Option<&AnswerLabel> {
        self.labels.last()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Data(format!("trajectory {}: {msg}", self.trace_id)));
        if self.labels.is_empty() {
            return bad("no labels");
        }
        if self.labels.len() != self.cum_tokens.len() {
            return bad("labels and cum_tokens differ in length");
        }
        if self.cum_tokens[0] != 0 {
            return bad("T_0 is not 0");
        }
        if self.cum_tokens.windows(2).any(|w| w[0] > w[1]) {
            return bad("cum_tokens decreases");
        }
        let first = self.labels[0].variant_name();
        if self.labels.iter().any(|l| l.variant_name() != first) {
            return bad("labels mix variants");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn choice(s: &str) -> AnswerLabel {
        AnswerLabel::Choice { label: s.into() }
    }

    fn query(e: Vec<f64>) -> AnswerLabel {
        AnswerLabel::Query {
            text: "q".into(),
            embedding: e,
        }
    }

    #[test]
    fn identical_choices_are_equivalent() {
        let cfg = EquivalenceConfig::default();
        assert!(equivalent(&choice("B"), &choice("B"), &cfg).unwrap());
        assert!(!equivalent(&choice("B"), &choice("C"), &cfg).unwrap());
    }

    #[test]
    fn query_threshold_is_inclusive() {
        let cfg = EquivalenceConfig::default();
        let e = vec![0.6, 0.8];
        assert!(equivalent(&query(e.clone()), &query(e), &cfg).unwrap());
        assert!(!equivalent(&query(vec![1.0, 0.0]), &query(vec![0.0, 1.0]), &cfg).unwrap());

        // cos = 0.9 exactly: 0.9 is representable as the product 1 * 0.9.
        let a = vec![1.0, 0.0];
        let b = vec![0.9, (1.0f64 - 0.81).sqrt()];
        assert_eq!(dot(&a, &b), 0.9);
        assert!(equivalent(&query(a), &query(b), &cfg).unwrap());
    }

    #[test]
    fn variant_mismatch_is_a_contract_error() {
        let err = equivalent(
            &choice("A"),
            &AnswerLabel::Token { text: "A".into() },
            &EquivalenceConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn gamma_out_of_range_rejected() {
        assert!(EquivalenceConfig::new(1.2).is_err());
        assert!(EquivalenceConfig::new(-0.1).is_err());
        assert!(EquivalenceConfig::new(1.0).is_ok());
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(normalize(vec![0.0, 0.0]).is_err());
        let v = normalize(vec![3.0, 4.0]).unwrap();
        assert_eq!(v, vec![0.6, 0.8]);
    }

    #[test]
    fn record_validation_catches_split_tokens() {
        let mut rec = TraceRecord {
            id: "t".into(),
            task: TaskKind::Mcq,
            context: "Q".into(),
            reasoning_text: "ab. cd.".into(),
            step_spans: vec![ByteSpan::new(0, 4), ByteSpan::new(4, 7)],
            token_offsets: vec![0, 2, 4, 6],
            final_answer: Some(choice("B")),
            gold: Some(choice("B")),
            options: Some(vec!["A".into(), "B".into()]),
            tools: None,
            flags: vec![],
            extra: Map::new(),
        };
        rec.validate().unwrap();
        assert_eq!(rec.step_text(1), Some("ab. "));
        assert_eq!(rec.step_text(2), Some("cd."));
        assert_eq!(rec.step_text(0), None);

        rec.token_offsets = vec![0, 3, 6];
        assert!(rec.validate().is_err());
    }

    #[test]
    fn trajectory_requires_matching_lengths() {
        assert!(AnswerTrajectory::new("t", vec![choice("A")], vec![0]).is_ok());
        assert!(AnswerTrajectory::new("t", vec![choice("A")], vec![0, 1]).is_err());
        assert!(AnswerTrajectory::new("t", vec![choice("A"), choice("B")], vec![0, 0]).is_ok());
        assert!(AnswerTrajectory::new("t", vec![choice("A"), choice("B")], vec![1, 2]).is_err());
    }
}
