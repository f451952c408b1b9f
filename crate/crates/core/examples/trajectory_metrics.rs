//! Answer-switch metrics on a single hand-written trajectory, then a
//! per-task summary with bootstrap intervals over a synthetic corpus.
//!
//! ```text
//! cargo run --example trajectory_metrics
//! ```

use trajgate::metrics::{
    answer_switches, bootstrap_mean_ci, final_switch_index, hold_for_k, metrics_row, summarize, tokens_after,
    transient_flip_anchors, SmoothingConfig,
};
use trajgate::synthetic::{corpus, CorpusConfig};
use trajgate::{AnswerLabel, EquivalenceConfig, TaskKind};

fn labels(s: &str) -> Vec<AnswerLabel> {
    s.chars()
        .map(|c| AnswerLabel::Choice { label: c.to_string() })
        .collect()
}

fn show(ls: &[AnswerLabel]) -> String {
    ls.iter().map(|l| l.text()).collect()
}

fn main() -> trajgate::Result<()> {
    let eq = EquivalenceConfig::default();
    let traj = labels("AABAACCCDCCCCC");
    let cum: Vec<usize> = (0..traj.len()).map(|i| 25 * i).collect();
    let t_star = final_switch_index(&traj, &eq);
    println!("raw      {}", show(&traj));
    println!(
        "t* = {t_star}, switches = {}, tokens after = {}",
        answer_switches(&traj, &eq),
        tokens_after(&cum, t_star)?
    );
    println!("flip anchors (k=3): {:?}", transient_flip_anchors(&traj, &eq, 3));
    let smooth = hold_for_k(&traj, &eq, 3);
    println!("hold-3   {}", show(&smooth));
    println!(
        "t* = {}, switches = {}",
        final_switch_index(&smooth, &eq),
        answer_switches(&smooth, &eq)
    );

    let items = corpus(&CorpusConfig::new(TaskKind::Mcq, 200, 1))?;
    let rows = items
        .iter()
        .map(|(t, traj)| metrics_row(traj, t.final_answer.as_ref(), &eq, &SmoothingConfig::default()))
        .collect::<trajgate::Result<Vec<_>>>()?;
    let s = summarize(&rows)?;
    println!("\n{} synthetic traces", s.n);
    println!(
        "Pr(t*=-1)  raw {:.1}%  denoised {:.1}%",
        s.pr_no_switch_raw_pct, s.pr_no_switch_denoised_pct
    );
    println!(
        "switches   raw {:.2}  denoised {:.2}  flips {:.2}",
        s.switches_raw, s.switches_denoised, s.tafs
    );
    println!("T_after    raw {:.1} ({:.1}%)", s.t_after_raw, s.t_after_raw_pct);
    let ci = bootstrap_mean_ci(
        &rows.iter().map(|r| r.switches_raw as f64).collect::<Vec<_>>(),
        2000,
        0.95,
        0,
    )?;
    println!("switches 95% CI [{:.2}, {:.2}]", ci.low, ci.high);
    Ok(())
}
