//! Trace collection and answer trajectories by forced answer completion.
//!
//! A trace is produced by sampling `C<think>` until `</think>`. The
//! trajectory then re-prompts the model once per step prefix with
//! `C<think>R_1..R_i</think>P` and reads off an answer with the task's rule.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::client::{
    argmax, candidate_logprobs, embed, render_prompt, AnswerPrefix, CompletionBackend, EmbeddingBackend,
    GenerationParams, StopRule, THINK_CLOSE, THINK_OPEN,
};
use crate::error::{Error, Result};
use crate::parallel::parallel_map;
use crate::seeds::derive_seed;
use crate::segment::{align_to_tokens, cum_tokens_for_spans, segment, SegmentationRules};
use crate::trace::{AnswerLabel, AnswerTrajectory, TaskKind, TraceRecord, FLAG_INVALID_TOOL, FLAG_TRUNCATED};

/// One input example, with its prompt already rendered through the model's
/// chat template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub id: String,
    pub task: TaskKind,
    pub context: String,
    #[serde(default)]
    pub gold: Option<String>,
    #[serde(default)]
    pub options: Option<Vec<String>>,
    #[serde(default)]
    pub tools: Option<Vec<String>>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Sampling settings for the reasoning trace; `max_tokens` is the
    /// reasoning budget.
    pub params: GenerationParams,
    /// Budget for free-form answers (tool names, search queries).
    pub answer_max_tokens: usize,
    pub segmentation: SegmentationRules,
    pub embedding_dim: Option<usize>,
    /// Run seed; per-request seeds are derived from it when set.
    pub seed: Option<u64>,
    /// Concurrent forced completions within one trajectory.
    pub step_concurrency: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            params: GenerationParams::default(),
            answer_max_tokens: 64,
            segmentation: SegmentationRules::default(),
            embedding_dim: None,
            seed: None,
            step_concurrency: 1,
        }
    }
}

impl EngineConfig {
    fn seeded(&self, params: &GenerationParams, id: &str, what: &str) -> GenerationParams {
        params.with_seed(self.seed.map(|s| derive_seed(s, &["generate", id, what])))
    }
}

/// A forced answer plus whether it lies in the declared answer space.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcedAnswer {
    pub label: AnswerLabel,
    pub valid: bool,
}

/// Sample the reasoning trace for `row` and segment it into steps.
///
/// A trace that exhausts the budget is returned with the `truncated` flag
/// set and no final answer; [`collect_trace`] turns that into an error.
pub fn sample_reasoning(model: &dyn CompletionBackend, row: &DatasetRow, cfg: &EngineConfig) -> Result<TraceRecord> {
    let gold = match (&row.gold, row.task) {
        (Some(g), task) if task.has_gold() => task.label_from_text(g),
        _ => None,
    };
    let prompt = format!("{}{THINK_OPEN}", row.context);
    let params = cfg.seeded(&cfg.params.with_stops(&[THINK_CLOSE]), &row.id, "reasoning");
    let result = model.complete(&prompt, &params)?;

    let offsets = result.token_offsets();
    let raw_spans = segment(&result.text, &cfg.segmentation);
    let step_spans = align_to_tokens(&raw_spans, &offsets, result.text.len());
    let mut rec = TraceRecord {
        id: row.id.clone(),
        task: row.task,
        context: row.context.clone(),
        reasoning_text: result.text,
        step_spans,
        token_offsets: offsets,
        final_answer: None,
        gold,
        options: row.options.clone(),
        tools: row.tools.clone(),
        flags: Vec::new(),
        extra: row.extra.clone(),
    };
    if result.finish == crate::client::FinishReason::Length {
        rec.flags.push(FLAG_TRUNCATED.to_owned());
    }
    rec.validate()?;
    Ok(rec)
}

/// Sample the unforced final answer after the full reasoning.
pub fn sample_final_answer(
    model: &dyn CompletionBackend,
    embedder: Option<&dyn EmbeddingBackend>,
    rec: &mut TraceRecord,
    cfg: &EngineConfig,
) -> Result<()> {
    let prefix = AnswerPrefix::for_task(rec.task);
    let prompt = render_prompt(
        &rec.context,
        &rec.reasoning_text,
        &rec.step_spans,
        rec.step_count(),
        &prefix,
    )?;
    let malformed = |detail: String| Error::MalformedAnswer {
        id: rec.id.clone(),
        detail,
    };

    let label = match rec.task {
        TaskKind::Mcq => {
            let params = cfg.seeded(
                &cfg.params.with_stops(&["\""]).with_max_tokens(cfg.answer_max_tokens),
                &rec.id,
                "final",
            );
            let text = model.complete(&prompt, &params)?.text;
            let choice = text.trim();
            if choice.is_empty() {
                return Err(malformed("empty option".into()));
            }
            if let Some(options) = &rec.options {
                if !options.iter().any(|o| o == choice) {
                    return Err(malformed(format!("{choice:?} is not one of {options:?}")));
                }
            }
            AnswerLabel::Choice {
                label: choice.to_owned(),
            }
        }
        TaskKind::Numeric => {
            let params = cfg.seeded(&cfg.params.with_stops(&[]).with_max_tokens(1), &rec.id, "final");
            let r = model.complete(&prompt, &params)?;
            let tok = r.tokens.first().ok_or_else(|| malformed("no token generated".into()))?;
            AnswerLabel::Token { text: tok.text.clone() }
        }
        TaskKind::ToolSelection | TaskKind::SearchQuery => {
            let text = sample_free_answer(model, &prompt, &prefix, cfg, &rec.id, "final")?;
            if text.is_empty() {
                return Err(malformed("empty answer".into()));
            }
            if rec.task == TaskKind::SearchQuery {
                query_label(embedder, text, cfg)?
            } else {
                if !tool_is_declared(rec.tools.as_deref(), &text) {
                    rec.flags.push(FLAG_INVALID_TOOL.to_owned());
                }
                AnswerLabel::Tool { name: text }
            }
        }
    };
    rec.final_answer = Some(label);
    Ok(())
}

/// Collect a complete trace: reasoning, steps, token offsets and final answer.
pub fn collect_trace(
    model: &dyn CompletionBackend,
    embedder: Option<&dyn EmbeddingBackend>,
    row: &DatasetRow,
    cfg: &EngineConfig,
) -> Result<TraceRecord> {
    let mut rec = sample_reasoning(model, row, cfg)?;
    if rec.is_truncated() {
        return Err(Error::Truncated {
            id: rec.id,
            tokens: rec.token_offsets.len(),
        });
    }
    sample_final_answer(model, embedder, &mut rec, cfg)?;
    Ok(rec)
}

fn tool_is_declared(tools: Option<&[String]>, name: &str) -> bool {
    tools.is_none_or(|t| t.iter().any(|x| x == name))
}

fn sample_free_answer(
    model: &dyn CompletionBackend,
    prompt: &str,
    prefix: &AnswerPrefix,
    cfg: &EngineConfig,
    id: &str,
    what: &str,
) -> Result<String> {
    debug_assert_ne!(prefix.stop_rule, StopRule::FirstToken);
    let params = cfg
        .params
        .with_stops(prefix.stop_rule.stop_sequences())
        .with_max_tokens(cfg.answer_max_tokens);
    Ok(model.complete(prompt, &cfg.seeded(&params, id, what))?.text)
}

fn query_label(embedder: Option<&dyn EmbeddingBackend>, text: String, cfg: &EngineConfig) -> Result<AnswerLabel> {
    let embedder = embedder.ok_or_else(|| Error::Config("search-query tasks need an embedding endpoint".into()))?;
    let e = embed(embedder, &text, cfg.embedding_dim)?;
    Ok(AnswerLabel::Query { text, embedding: e })
}

/// The intermediate answer `A_i` after the first `step` reasoning steps.
pub fn forced_answer(
    model: &dyn CompletionBackend,
    embedder: Option<&dyn EmbeddingBackend>,
    trace: &TraceRecord,
    step: usize,
    cfg: &EngineConfig,
) -> Result<ForcedAnswer> {
    let prefix = AnswerPrefix::for_task(trace.task);
    let prompt = render_prompt(&trace.context, &trace.reasoning_text, &trace.step_spans, step, &prefix)?;
    let step_key = step.to_string();
    let params = cfg
        .params
        .with_seed(cfg.seed.map(|s| derive_seed(s, &["forced", &trace.id, &step_key])));

    match trace.task {
        TaskKind::Mcq => {
            let options = trace
                .options
                .as_deref()
                .ok_or_else(|| Error::Data(format!("trace {} has no options", trace.id)))?;
            let scores = candidate_logprobs(model, &prompt, options, &params)?;
            let best = argmax(scores.iter().map(|(k, v)| (k.as_str(), *v))).expect("options are non-empty");
            Ok(ForcedAnswer {
                label: AnswerLabel::Choice { label: best.to_owned() },
                valid: true,
            })
        }
        TaskKind::Numeric => {
            let r = model.complete(&prompt, &params.with_stops(&[]).with_max_tokens(1))?;
            let first = r.first_position();
            let best = argmax(first.iter().map(|(k, v)| (k.as_str(), *v))).ok_or_else(|| Error::MalformedAnswer {
                id: trace.id.clone(),
                detail: format!("no token at step {step}"),
            })?;
            Ok(ForcedAnswer {
                label: AnswerLabel::Token { text: best.to_owned() },
                valid: true,
            })
        }
        TaskKind::ToolSelection => {
            let p = params
                .with_stops(prefix.stop_rule.stop_sequences())
                .with_max_tokens(cfg.answer_max_tokens);
            let name = model.complete(&prompt, &p)?.text;
            let valid = tool_is_declared(trace.tools.as_deref(), &name);
            Ok(ForcedAnswer {
                label: AnswerLabel::Tool { name },
                valid,
            })
        }
        TaskKind::SearchQuery => {
            let p = params
                .with_stops(prefix.stop_rule.stop_sequences())
                .with_max_tokens(cfg.answer_max_tokens);
            let text = model.complete(&prompt, &p)?.text;
            Ok(ForcedAnswer {
                label: query_label(embedder, text, cfg)?,
                valid: true,
            })
        }
    }
}

/// Forced answers at every step `0..=n`, with cumulative token counts.
pub fn build_trajectory(
    model: &dyn CompletionBackend,
    embedder: Option<&dyn EmbeddingBackend>,
    trace: &TraceRecord,
    cfg: &EngineConfig,
) -> Result<AnswerTrajectory> {
    trace.validate()?;
    let steps: Vec<usize> = (0..=trace.step_count()).collect();
    let answers = parallel_map(&steps, cfg.step_concurrency, |_, &i| {
        forced_answer(model, embedder, trace, i, cfg)
    });

    let mut labels = Vec::with_capacity(answers.len());
    let mut invalid_steps = Vec::new();
    for (step, a) in answers.into_iter().enumerate() {
        let a = a.map_err(|e| Error::PartialTrajectory {
            id: trace.id.clone(),
            step,
            source: Box::new(e),
        })?;
        if !a.valid {
            invalid_steps.push(step);
        }
        labels.push(a.label);
    }
    let cum_tokens = cum_tokens_for_spans(&trace.step_spans, &trace.token_offsets)?;
    let mut traj = AnswerTrajectory::new(trace.id.clone(), labels, cum_tokens)?;
    traj.invalid_steps = invalid_steps;
    Ok(traj)
}
