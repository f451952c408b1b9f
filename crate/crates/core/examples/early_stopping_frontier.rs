//! Compare random, probe and oracle gates on a synthetic corpus: tokens
//! saved against accuracy drop at each threshold.
//!
//! ```text
//! cargo run --release --example early_stopping_frontier
//! ```

use trajgate::gating::{
    default_tau_grid, evaluate_frontier, oracle_gate, probe_gate, random_gate, FrontierExample, GateKind,
    GateScoreSeries,
};
use trajgate::metrics::final_switch_index;
use trajgate::probe::{balance, build_training_set, train, ProbeTrainConfig, TraceTarget};
use trajgate::report::frontier_tsv;
use trajgate::synthetic::{corpus, planted_dump, CorpusConfig, DumpShape};
use trajgate::{EquivalenceConfig, TaskKind};

fn main() -> trajgate::Result<()> {
    let eq = EquivalenceConfig::default();
    let shape = DumpShape {
        margin: 0.8,
        ..DumpShape::default()
    };
    let train_items = corpus(&CorpusConfig::new(TaskKind::Mcq, 200, 10))?;
    let test_items = corpus(&CorpusConfig {
        seed: 11,
        ..CorpusConfig::new(TaskKind::Mcq, 100, 0)
    })?;
    let target = |traj: &trajgate::AnswerTrajectory| TraceTarget {
        trace_id: traj.trace_id.clone(),
        steps: traj.steps(),
        t_star: final_switch_index(&traj.labels, &eq),
    };
    let dump_for = |items: &[(trajgate::TraceRecord, trajgate::AnswerTrajectory)], id: &str, seed: u64| {
        let t = target(&items.iter().find(|(r, _)| r.id == id).expect("id").1);
        planted_dump(id, t.steps, t.t_star, shape, seed)
    };

    let (fit, val) = train_items.split_at(160);
    let cfg = ProbeTrainConfig {
        workers: 4,
        ..ProbeTrainConfig::default()
    };
    let mut train_set = build_training_set(
        &fit.iter().map(|(_, t)| target(t)).collect::<Vec<_>>(),
        |id| dump_for(&train_items, id, 10),
        &cfg,
    )?;
    balance(&mut train_set, 0);
    let val_set = build_training_set(
        &val.iter().map(|(_, t)| target(t)).collect::<Vec<_>>(),
        |id| dump_for(&train_items, id, 10),
        &cfg,
    )?;
    let probe = train(&train_set, &val_set, &cfg)?.probe;

    let mut rows = Vec::new();
    for gate in [GateKind::Random, GateKind::Probe, GateKind::Oracle] {
        let series = test_items
            .iter()
            .map(|(r, traj)| match gate {
                GateKind::Random => Ok(random_gate(&r.id, traj.steps(), 0)),
                GateKind::Oracle => Ok(oracle_gate(traj, &eq)),
                GateKind::Probe => probe_gate(&probe, &r.id, &dump_for(&test_items, &r.id, 10)?),
            })
            .collect::<trajgate::Result<Vec<GateScoreSeries>>>()?;
        let examples: Vec<FrontierExample> = test_items
            .iter()
            .zip(&series)
            .map(|((r, traj), s)| FrontierExample {
                trajectory: traj,
                scores: s,
                gold: r.gold.as_ref().map(|g| g.text()),
            })
            .collect();
        for row in evaluate_frontier(&examples, &default_tau_grid(&series)?, TaskKind::Mcq)? {
            rows.push((gate, row));
        }
    }
    print!("{}", frontier_tsv(TaskKind::Mcq, &rows));
    Ok(())
}
