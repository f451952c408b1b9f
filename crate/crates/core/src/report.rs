//! Tab-separated report tables with fixed float formatting, so the same
//! inputs give byte-identical files on every platform.

use std::fmt::Write;

use crate::gating::{FrontierRow, GateKind};
use crate::metrics::{BootstrapCi, MetricsRow, Summary};
use crate::trace::TaskKind;

/// Decimal places used for every float column.
pub const DECIMALS: usize = 4;

pub fn fmt_f(x: f64) -> String {
    let s = format!("{x:.DECIMALS$}");
    // "-0.0000" and "0.0000" must not differ between platforms or paths.
    if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
        s.trim_start_matches('-').to_owned()
    } else {
        s
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_else(|| "NA".into())
}

fn line(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join("\t"));
    out.push('\n');
}

fn header(out: &mut String, names: &[&str]) {
    line(out, &names.iter().map(|s| s.to_string()).collect::<Vec<_>>());
}

pub fn metrics_rows_tsv(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    header(
        &mut out,
        &[
            "trace_id",
            "steps",
            "t_star_raw",
            "t_star_denoised",
            "switches_raw",
            "switches_denoised",
            "tafs",
            "t_after_raw",
            "t_after_denoised",
            "t_total",
            "fraction_after_raw",
            "fraction_after_denoised",
            "final_agrees",
        ],
    );
    for r in rows {
        line(
            &mut out,
            &[
                r.trace_id.clone(),
                r.steps.to_string(),
                r.t_star_raw.to_string(),
                r.t_star_denoised.to_string(),
                r.switches_raw.to_string(),
                r.switches_denoised.to_string(),
                r.tafs.to_string(),
                r.t_after_raw.to_string(),
                r.t_after_denoised.to_string(),
                r.t_total.to_string(),
                fmt_f(r.fraction_after_raw),
                fmt_f(r.fraction_after_denoised),
                match r.final_agrees {
                    Some(true) => "1".into(),
                    Some(false) => "0".into(),
                    None => "NA".into(),
                },
            ],
        );
    }
    out
}

/// One row per task, raw and denoised columns side by side.
pub fn summary_tsv(rows: &[(TaskKind, Summary)]) -> String {
    let mut out = String::new();
    header(
        &mut out,
        &[
            "task",
            "n",
            "pr_no_switch_raw_pct",
            "pr_no_switch_denoised_pct",
            "switches_raw",
            "switches_denoised",
            "tafs",
            "t_after_raw",
            "t_after_raw_pct",
            "t_after_denoised",
            "t_after_denoised_pct",
            "t_after_raw_cond",
            "t_after_raw_cond_pct",
            "t_after_denoised_cond",
            "t_after_denoised_cond_pct",
            "final_disagree_pct",
        ],
    );
    for (task, s) in rows {
        line(
            &mut out,
            &[
                task.to_string(),
                s.n.to_string(),
                fmt_f(s.pr_no_switch_raw_pct),
                fmt_f(s.pr_no_switch_denoised_pct),
                fmt_f(s.switches_raw),
                fmt_f(s.switches_denoised),
                fmt_f(s.tafs),
                fmt_f(s.t_after_raw),
                fmt_f(s.t_after_raw_pct),
                fmt_f(s.t_after_denoised),
                fmt_f(s.t_after_denoised_pct),
                fmt_opt(s.t_after_raw_cond),
                fmt_opt(s.t_after_raw_cond_pct),
                fmt_opt(s.t_after_denoised_cond),
                fmt_opt(s.t_after_denoised_cond_pct),
                fmt_opt(s.final_disagree_pct),
            ],
        );
    }
    out
}

pub fn bootstrap_tsv(rows: &[(TaskKind, &str, BootstrapCi)]) -> String {
    let mut out = String::new();
    header(&mut out, &["task", "metric", "mean", "low", "high"]);
    for (task, metric, ci) in rows {
        line(
            &mut out,
            &[
                task.to_string(),
                metric.to_string(),
                fmt_f(ci.mean),
                fmt_f(ci.low),
                fmt_f(ci.high),
            ],
        );
    }
    out
}

/// Name of the quality column for a task.
pub fn quality_column(task: TaskKind) -> &'static str {
    if task.has_gold() {
        "accuracy_drop_pp"
    } else {
        "mean_cosine"
    }
}

/// Quality, tokens saved and token share first, then the threshold.
pub fn frontier_tsv(task: TaskKind, rows: &[(GateKind, FrontierRow)]) -> String {
    let mut out = String::new();
    header(
        &mut out,
        &[
            "task",
            "gate",
            quality_column(task),
            "tokens_saved",
            "token_pct",
            "tau",
            "n",
        ],
    );
    for (gate, r) in rows {
        line(
            &mut out,
            &[
                task.to_string(),
                gate.as_str().into(),
                fmt_f(r.quality_delta),
                fmt_f(r.mean_tokens_saved),
                fmt_f(r.token_pct_saved),
                fmt_f(r.tau),
                r.n_examples.to_string(),
            ],
        );
    }
    out
}

/// `x` = mean tokens saved, `y` = quality, one series per gate.
pub fn plot_data_tsv(rows: &[(GateKind, FrontierRow)]) -> String {
    let mut out = String::new();
    header(&mut out, &["series", "x", "y"]);
    for (gate, r) in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            gate.as_str(),
            fmt_f(r.mean_tokens_saved),
            fmt_f(r.quality_delta)
        );
    }
    out
}
