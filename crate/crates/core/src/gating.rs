//! Gate scores, the stopping rule and the tokens-saved vs. quality frontier.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::datastore::HiddenStateDump;
use crate::error::{Error, Result};
use crate::metrics::final_switch_index;
use crate::probe::ProbeModel;
use crate::seeds::rng_for;
use crate::trace::{dot, AnswerLabel, AnswerTrajectory, EquivalenceConfig, TaskKind};

/// Number of rows in the default threshold grid.
pub const DEFAULT_TAU_ROWS: usize = 13;

/// Per-step gate scores `m_0..m_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateScoreSeries {
    pub trace_id: String,
    pub scores: Vec<f64>,
}

impl GateScoreSeries {
    pub fn new(trace_id: impl Into<String>, scores: Vec<f64>) -> Result<Self> {
        let s = Self {
            trace_id: trace_id.into(),
            scores,
        };
        if let Some(bad) = s.scores.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(Error::Contract(format!("gate score {bad} outside [0, 1]")));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Random,
    Probe,
    Oracle,
}

impl GateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GateKind::Random => "random",
            GateKind::Probe => "probe",
            GateKind::Oracle => "oracle",
        }
    }
}

/// Uniform score for step `i`, read from a ChaCha stream keyed by
/// `(seed, trace_id)` at word position `2i`. Any single score can be
/// recomputed without generating the others.
pub fn random_score(seed: u64, trace_id: &str, i: usize) -> f64 {
    let mut rng = rng_for(seed, &["random-gate", trace_id]);
    rng.set_word_pos(2 * i as u128);
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Scores for steps `0..=n_steps`.
pub fn random_gate(trace_id: &str, n_steps: usize, seed: u64) -> GateScoreSeries {
    let mut rng = rng_for(seed, &["random-gate", trace_id]);
    let scores = (0..=n_steps)
        .map(|_| (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64))
        .collect();
    GateScoreSeries {
        trace_id: trace_id.to_owned(),
        scores,
    }
}

pub fn probe_gate(probe: &ProbeModel, trace_id: &str, dump: &HiddenStateDump) -> Result<GateScoreSeries> {
    if probe.layer_index >= dump.layer_count {
        return Err(Error::Data(format!(
            "trace {trace_id}: dump has {} layers, probe reads layer {}",
            dump.layer_count, probe.layer_index
        )));
    }
    let scores = (0..dump.step_count)
        .map(|i| {
            let h = dump.state(i, probe.layer_index).expect("index checked");
            probe.score(h)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GateScoreSeries {
        trace_id: trace_id.to_owned(),
        scores,
    })
}

/// The ideal gate: 1 from step `t* + 1` on, 0 before.
pub fn oracle_gate(traj: &AnswerTrajectory, cfg: &EquivalenceConfig) -> GateScoreSeries {
    let first = final_switch_index(&traj.labels, cfg) + 1;
    GateScoreSeries {
        trace_id: traj.trace_id.clone(),
        scores: (0..traj.labels.len())
            .map(|i| if i as isize >= first { 1.0 } else { 0.0 })
            .collect(),
    }
}

/// `min { i : m_i >= tau }`.
pub fn stop_index(scores: &[f64], tau: f64) -> Option<usize> {
    scores.iter().position(|m| *m >= tau)
}

/// Nearest-rank quantiles `0, 1/(rows-1), .., 1` of the pooled scores.
/// Repeated values are kept so every grid has `rows` entries.
pub fn quantile_tau_grid(series: &[GateScoreSeries], rows: usize) -> Result<Vec<f64>> {
    let mut pooled: Vec<f64> = series.iter().flat_map(|s| s.scores.iter().copied()).collect();
    if pooled.is_empty() {
        return Err(Error::Empty("gate scores"));
    }
    if rows < 2 {
        return Err(Error::Config("a tau grid needs at least 2 rows".into()));
    }
    pooled.sort_by(f64::total_cmp);
    let last = (pooled.len() - 1) as f64;
    Ok((0..rows)
        .map(|j| pooled[(j as f64 / (rows - 1) as f64 * last).round() as usize])
        .collect())
}

pub fn default_tau_grid(series: &[GateScoreSeries]) -> Result<Vec<f64>> {
    quantile_tau_grid(series, DEFAULT_TAU_ROWS)
}

/// One trajectory paired with its gate scores and, for accuracy tasks, the
/// gold answer.
#[derive(Debug, Clone, Copy)]
pub struct FrontierExample<'a> {
    pub trajectory: &'a AnswerTrajectory,
    pub scores: &'a GateScoreSeries,
    pub gold: Option<&'a str>,
}

/// One threshold's aggregate over all examples.
///
/// `quality_delta` is the accuracy drop in percentage points (full minus
/// stopped), or the mean cosine between stopped and full queries for search
/// tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub tau: f64,
    pub quality_delta: f64,
    pub mean_tokens_saved: f64,
    pub token_pct_saved: f64,
    pub n_examples: usize,
}

fn correct(label: &AnswerLabel, gold: &str) -> bool {
    label.text().trim() == gold.trim()
}

fn cosine(a: &AnswerLabel, b: &AnswerLabel) -> Result<f64> {
    match (a.embedding(), b.embedding()) {
        (Some(x), Some(y)) if x.len() == y.len() => Ok(dot(x, y)),
        _ => Err(Error::Contract(
            "search frontier needs query labels of equal dimension".into(),
        )),
    }
}

/// Replay every example under each threshold. Rows come back in ascending
/// tau order.
///
/// `token_pct_saved` is total tokens saved over total reasoning tokens.
pub fn evaluate_frontier(
    examples: &[FrontierExample<'_>],
    tau_grid: &[f64],
    task: TaskKind,
) -> Result<Vec<FrontierRow>> {
    if tau_grid.is_empty() {
        return Err(Error::Config("tau grid is empty".into()));
    }
    if examples.is_empty() {
        return Err(Error::Empty("frontier examples"));
    }
    for ex in examples {
        let traj = ex.trajectory;
        if ex.scores.trace_id != traj.trace_id || ex.scores.scores.len() != traj.labels.len() {
            return Err(Error::Data(format!(
                "trace {}: {} gate scores for {} steps",
                traj.trace_id,
                ex.scores.scores.len(),
                traj.labels.len()
            )));
        }
        if task.has_gold() && ex.gold.is_none() {
            return Err(Error::Data(format!("trace {} has no gold answer", traj.trace_id)));
        }
    }
    let mut taus = tau_grid.to_vec();
    if taus.iter().any(|t| t.is_nan()) {
        return Err(Error::Config("tau grid contains NaN".into()));
    }
    taus.sort_by(f64::total_cmp);

    let n = examples.len() as f64;
    let total_tokens: usize = examples.iter().map(|e| e.trajectory.total_tokens()).sum();
    let full_correct = examples
        .iter()
        .filter(|e| task.has_gold() && correct(e.trajectory.last_label().expect("validated"), e.gold.unwrap()))
        .count();

    taus.into_iter()
        .map(|tau| {
            let mut saved = 0usize;
            let mut stopped_correct = 0usize;
            let mut cos_sum = 0.0;
            for ex in examples {
                let traj = ex.trajectory;
                let last = traj.labels.len() - 1;
                let s = stop_index(&ex.scores.scores, tau);
                let at = s.unwrap_or(last);
                saved += traj.total_tokens() - traj.cum_tokens[at];
                let answer = &traj.labels[at];
                if task.has_gold() {
                    stopped_correct += correct(answer, ex.gold.unwrap()) as usize;
                } else {
                    cos_sum += cosine(answer, &traj.labels[last])?;
                }
            }
            let quality_delta = if task.has_gold() {
                100.0 * (full_correct as f64 - stopped_correct as f64) / n
            } else {
                cos_sum / n
            };
            Ok(FrontierRow {
                tau,
                quality_delta,
                mean_tokens_saved: saved as f64 / n,
                token_pct_saved: if total_tokens > 0 {
                    100.0 * saved as f64 / total_tokens as f64
                } else {
                    0.0
                },
                n_examples: examples.len(),
            })
        })
        .collect()
}
