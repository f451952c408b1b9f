//! Answer-trajectory metrics: final switch index, switch counts, transient
//! flips, hold-for-k smoothing, tokens after the final switch, dataset
//! summaries and bootstrap intervals.
//!
//! All label comparisons go through [`equivalent`], so search-query
//! trajectories use the cosine threshold. Trajectories hold a single label
//! variant (checked by [`AnswerTrajectory::validate`]); a comparison that
//! cannot be made counts as "not equivalent".

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::rng_for;
use crate::trace::{equivalent, AnswerLabel, AnswerTrajectory, EquivalenceConfig};

/// Default maximum flip length and hold window.
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub k: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { k: DEFAULT_K }
    }
}

impl SmoothingConfig {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(Self { k })
    }
}

fn eq(a: &AnswerLabel, b: &AnswerLabel, cfg: &EquivalenceConfig) -> bool {
    equivalent(a, b, cfg).unwrap_or(false)
}

/// Index of the last answer switch, or -1 when the answer never changes.
pub fn final_switch_index(labels: &[AnswerLabel], cfg: &EquivalenceConfig) -> isize {
    labels
        .windows(2)
        .rposition(|w| !eq(&w[0], &w[1], cfg))
        .map_or(-1, |i| i as isize)
}

/// Number of adjacent pairs whose answers differ.
pub fn answer_switches(labels: &[AnswerLabel], cfg: &EquivalenceConfig) -> usize {
    labels.windows(2).filter(|w| !eq(&w[0], &w[1], cfg)).count()
}

/// Anchors `i` of transient flips: the answer leaves `A_i` for `l <= k` steps
/// (`l >= 1`) and then returns to it.
pub fn transient_flip_anchors(labels: &[AnswerLabel], cfg: &EquivalenceConfig, k: usize) -> Vec<usize> {
    let n = labels.len().saturating_sub(1);
    if n < k + 1 {
        return Vec::new();
    }
    (0..n - k)
        .filter(|&i| {
            let anchor = &labels[i];
            // The run of steps differing from the anchor must end, within k
            // steps, on a step that matches it again.
            (1..=k + 1)
                .find(|&j| eq(anchor, &labels[i + j], cfg))
                .is_some_and(|j| j >= 2)
        })
        .collect()
}

/// Number of transient answer flips of length at most `k`.
pub fn transient_flips(labels: &[AnswerLabel], cfg: &EquivalenceConfig, k: usize) -> usize {
    transient_flip_anchors(labels, cfg, k).len()
}

/// Causal hold-for-k smoothing.
///
/// `Ã_0 = A_0`; for `i >= 1`, `Ã_i = A_i` when the full window
/// `A_{i-k+1}..A_i` is equivalent to `A_i`, otherwise `Ã_i = Ã_{i-1}`. Each
/// window entry is compared against `A_i` directly, never chained.
pub fn hold_for_k(labels: &[AnswerLabel], cfg: &EquivalenceConfig, k: usize) -> Vec<AnswerLabel> {
    let k = k.max(1);
    let mut out: Vec<AnswerLabel> = Vec::with_capacity(labels.len());
    for (i, current) in labels.iter().enumerate() {
        let accept = i == 0 || (i + 1 >= k && (1..k).all(|j| eq(&labels[i - j], current, cfg)));
        let next = if accept { current.clone() } else { out[i - 1].clone() };
        out.push(next);
    }
    out
}

/// [`hold_for_k`] applied to a trajectory, keeping its token counts.
pub fn smooth(traj: &AnswerTrajectory, cfg: &EquivalenceConfig, k: usize) -> AnswerTrajectory {
    AnswerTrajectory {
        trace_id: traj.trace_id.clone(),
        labels: hold_for_k(&traj.labels, cfg, k),
        cum_tokens: traj.cum_tokens.clone(),
        invalid_steps: traj.invalid_steps.clone(),
    }
}

/// Reasoning tokens generated after step `t_star + 1`: `T_n - T_{t*+1}`.
pub fn tokens_after(cum_tokens: &[usize], t_star: isize) -> Result<usize> {
    let n = cum_tokens.len() as isize - 1;
    if n < 0 || t_star < -1 || t_star > n - 1 {
        return Err(Error::Contract(format!(
            "t* = {t_star} outside -1..={} for {n} steps",
            n - 1
        )));
    }
    let total = cum_tokens[n as usize];
    Ok(total - cum_tokens[(t_star + 1) as usize])
}

/// Per-trace metrics, raw and after hold-for-k smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub trace_id: String,
    pub steps: usize,
    pub t_star_raw: isize,
    pub t_star_denoised: isize,
    pub switches_raw: usize,
    pub switches_denoised: usize,
    pub tafs: usize,
    pub t_after_raw: usize,
    pub t_after_denoised: usize,
    pub t_total: usize,
    pub fraction_after_raw: f64,
    pub fraction_after_denoised: f64,
    /// Whether `A_n` agrees with the unforced final answer, when known.
    pub final_agrees: Option<bool>,
}

pub fn metrics_row(
    traj: &AnswerTrajectory,
    final_answer: Option<&AnswerLabel>,
    cfg: &EquivalenceConfig,
    smoothing: &SmoothingConfig,
) -> Result<MetricsRow> {
    traj.validate()?;
    let smoothed = hold_for_k(&traj.labels, cfg, smoothing.k);
    let t_star_raw = final_switch_index(&traj.labels, cfg);
    let t_star_denoised = final_switch_index(&smoothed, cfg);
    let t_after_raw = tokens_after(&traj.cum_tokens, t_star_raw)?;
    let t_after_denoised = tokens_after(&traj.cum_tokens, t_star_denoised)?;
    let t_total = traj.total_tokens();
    let frac = |x: usize| if t_total > 0 { x as f64 / t_total as f64 } else { 0.0 };
    let final_agrees = match (final_answer, traj.last_label()) {
        (Some(f), Some(last)) => Some(equivalent(f, last, cfg)?),
        _ => None,
    };
    Ok(MetricsRow {
        trace_id: traj.trace_id.clone(),
        steps: traj.steps(),
        t_star_raw,
        t_star_denoised,
        switches_raw: answer_switches(&traj.labels, cfg),
        switches_denoised: answer_switches(&smoothed, cfg),
        tafs: transient_flips(&traj.labels, cfg, smoothing.k),
        t_after_raw,
        t_after_denoised,
        t_total,
        fraction_after_raw: frac(t_after_raw),
        fraction_after_denoised: frac(t_after_denoised),
        final_agrees,
    })
}

/// Dataset-level aggregates in the shape of the trajectory-metrics table.
///
/// Percentages are in `[0, 100]`. `t_after_*` means include traces with no
/// switch (their whole trace counts as post-decision); the `*_cond` fields
/// average over traces with at least one switch only and are `None` when
/// there are none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub pr_no_switch_raw_pct: f64,
    pub pr_no_switch_denoised_pct: f64,
    pub switches_raw: f64,
    pub switches_denoised: f64,
    pub tafs: f64,
    pub t_after_raw: f64,
    pub t_after_raw_pct: f64,
    pub t_after_denoised: f64,
    pub t_after_denoised_pct: f64,
    pub t_after_raw_cond: Option<f64>,
    pub t_after_raw_cond_pct: Option<f64>,
    pub t_after_denoised_cond: Option<f64>,
    pub t_after_denoised_cond_pct: Option<f64>,
    pub final_disagree_pct: Option<f64>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.into_iter().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

pub fn summarize(rows: &[MetricsRow]) -> Result<Summary> {
    if rows.is_empty() {
        return Err(Error::Empty("metrics rows"));
    }
    let pct = |f: &dyn Fn(&MetricsRow) -> bool| 100.0 * rows.iter().filter(|r| f(r)).count() as f64 / rows.len() as f64;
    let m = |f: &dyn Fn(&MetricsRow) -> f64| mean(rows.iter().map(f)).expect("non-empty");
    let cond = |raw: bool, f: &dyn Fn(&MetricsRow) -> f64| {
        mean(
            rows.iter()
                .filter(|r| if raw { r.t_star_raw >= 0 } else { r.t_star_denoised >= 0 })
                .map(f),
        )
    };
    let agreements: Vec<bool> = rows.iter().filter_map(|r| r.final_agrees).collect();
    Ok(Summary {
        n: rows.len(),
        pr_no_switch_raw_pct: pct(&|r| r.t_star_raw == -1),
        pr_no_switch_denoised_pct: pct(&|r| r.t_star_denoised == -1),
        switches_raw: m(&|r| r.switches_raw as f64),
        switches_denoised: m(&|r| r.switches_denoised as f64),
        tafs: m(&|r| r.tafs as f64),
        t_after_raw: m(&|r| r.t_after_raw as f64),
        t_after_raw_pct: 100.0 * m(&|r| r.fraction_after_raw),
        t_after_denoised: m(&|r| r.t_after_denoised as f64),
        t_after_denoised_pct: 100.0 * m(&|r| r.fraction_after_denoised),
        t_after_raw_cond: cond(true, &|r| r.t_after_raw as f64),
        t_after_raw_cond_pct: cond(true, &|r| 100.0 * r.fraction_after_raw),
        t_after_denoised_cond: cond(false, &|r| r.t_after_denoised as f64),
        t_after_denoised_cond_pct: cond(false, &|r| 100.0 * r.fraction_after_denoised),
        final_disagree_pct: (!agreements.is_empty())
            .then(|| 100.0 * agreements.iter().filter(|a| !**a).count() as f64 / agreements.len() as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap interval for the mean, deterministic in `seed`.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, confidence: f64, seed: u64) -> Result<BootstrapCi> {
    if values.is_empty() {
        return Err(Error::Empty("bootstrap values"));
    }
    if resamples == 0 || !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Config(format!(
            "bootstrap needs resamples >= 1 and confidence in (0, 1), got {resamples} and {confidence}"
        )));
    }
    let n = values.len();
    let point = values.iter().sum::<f64>() / n as f64;
    let mut rng = rng_for(seed, &["bootstrap"]);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - confidence) / 2.0;
    Ok(BootstrapCi {
        mean: point,
        low: quantile_sorted(&means, alpha),
        high: quantile_sorted(&means, 1.0 - alpha),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(s: &str) -> Vec<AnswerLabel> {
        s.chars()
            .map(|c| AnswerLabel::Choice { label: c.to_string() })
            .collect()
    }

    fn text(l: &[AnswerLabel]) -> String {
        l.iter().map(AnswerLabel::text).collect()
    }

    const CFG: EquivalenceConfig = EquivalenceConfig { gamma: 0.9 };

    #[test]
    fn final_switch_examples() {
        assert_eq!(final_switch_index(&labels("AAA"), &CFG), -1);
        assert_eq!(final_switch_index(&labels("AABAA"), &CFG), 2);
        assert_eq!(final_switch_index(&labels("CBCDD"), &CFG), 2);
        assert_eq!(final_switch_index(&labels("A"), &CFG), -1);
    }

    #[test]
    fn switch_examples() {
        assert_eq!(answer_switches(&labels("AAAA"), &CFG), 0);
        assert_eq!(answer_switches(&labels("ABAB"), &CFG), 3);
    }

    #[test]
    fn flip_examples() {
        assert_eq!(transient_flips(&labels("AAAAAA"), &CFG, 3), 0);
        assert_eq!(transient_flip_anchors(&labels("ABAAAA"), &CFG, 3), vec![0]);
        // Too short for any anchor.
        assert_eq!(transient_flips(&labels("ABA"), &CFG, 3), 0);
        // Deviation longer than k does not count.
        assert_eq!(transient_flips(&labels("ABBBBAAAAA"), &CFG, 3), 0);
        assert_eq!(transient_flips(&labels("ABBBAAAAA"), &CFG, 3), 1);
    }

    #[test]
    fn hold_examples() {
        assert_eq!(text(&hold_for_k(&labels("AAAA"), &CFG, 3)), "AAAA");
        assert_eq!(text(&hold_for_k(&labels("ABBB"), &CFG, 3)), "AAAB");
        assert_eq!(text(&hold_for_k(&labels("ABAAA"), &CFG, 3)), "AAAAA");
        assert_eq!(text(&hold_for_k(&labels("ABAB"), &CFG, 1)), "ABAB");
    }

    #[test]
    fn tokens_after_examples() {
        let t = [0, 10, 20, 30];
        assert_eq!(tokens_after(&t, 1).unwrap(), 10);
        assert_eq!(tokens_after(&t, 2).unwrap(), 0);
        assert_eq!(tokens_after(&t, -1).unwrap(), 30);
        assert!(tokens_after(&t, 3).is_err());
        assert!(tokens_after(&t, -2).is_err());
        assert_eq!(tokens_after(&[0], -1).unwrap(), 0);
    }

    fn row(id: &str, s: &str, cum: Vec<usize>) -> MetricsRow {
        let traj = AnswerTrajectory::new(id, labels(s), cum).unwrap();
        metrics_row(&traj, None, &CFG, &SmoothingConfig::default()).unwrap()
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[row("a", "AAA", vec![0, 5, 10])]).unwrap();
        assert_eq!(s.pr_no_switch_raw_pct, 100.0);
        assert_eq!(s.switches_raw, 0.0);
        assert_eq!(s.tafs, 0.0);
        assert_eq!(s.t_after_raw, 10.0);
        assert_eq!(s.t_after_raw_cond, None);

        let s = summarize(&[row("a", "AAA", vec![0, 5, 10]), row("b", "ABB", vec![0, 5, 10])]).unwrap();
        assert_eq!(s.pr_no_switch_raw_pct, 50.0);
        assert_eq!(s.t_after_raw, (10.0 + 5.0) / 2.0);
        assert_eq!(s.t_after_raw_cond, Some(5.0));
        assert_eq!(s.t_after_raw_pct, 75.0);

        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn bootstrap_degenerate_cases() {
        let ci = bootstrap_mean_ci(&[2.5; 10], 200, 0.95, 1).unwrap();
        assert_eq!((ci.mean, ci.low, ci.high), (2.5, 2.5, 2.5));
        let ci = bootstrap_mean_ci(&[7.0], 50, 0.9, 1).unwrap();
        assert_eq!((ci.low, ci.high), (7.0, 7.0));
        assert!(bootstrap_mean_ci(&[], 10, 0.95, 1).is_err());
        assert_eq!(
            bootstrap_mean_ci(&[1.0, 2.0, 9.0], 100, 0.95, 3).unwrap(),
            bootstrap_mean_ci(&[1.0, 2.0, 9.0], 100, 0.95, 3).unwrap()
        );
    }
}
