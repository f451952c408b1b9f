//! Train a linear probe on synthetic hidden states with a planted
//! separator, then inspect the learning-rate and layer sweeps.
//!
//! ```text
//! cargo run --release --example train_probe
//! ```

use trajgate::datastore::split;
use trajgate::metrics::final_switch_index;
use trajgate::probe::{balance, build_training_set, train, ProbeTrainConfig, TraceTarget};
use trajgate::synthetic::{corpus, planted_dump, CorpusConfig, DumpShape};
use trajgate::{EquivalenceConfig, TaskKind};

fn main() -> trajgate::Result<()> {
    let items = corpus(&CorpusConfig::new(TaskKind::Mcq, 300, 4))?;
    let eq = EquivalenceConfig::default();
    let targets: Vec<TraceTarget> = items
        .iter()
        .map(|(_, traj)| TraceTarget {
            trace_id: traj.trace_id.clone(),
            steps: traj.steps(),
            t_star: final_switch_index(&traj.labels, &eq),
        })
        .collect();
    let ids: Vec<String> = targets.iter().map(|t| t.trace_id.clone()).collect();
    let parts = split(&ids, (0.8, 0.1, 0.1), 0)?;
    let pick = |ids: &[String]| -> Vec<TraceTarget> {
        targets.iter().filter(|t| ids.contains(&t.trace_id)).cloned().collect()
    };

    let shape = DumpShape {
        margin: 0.6,
        ..DumpShape::default()
    };
    let steps_of = |id: &str| targets.iter().find(|t| t.trace_id == id).expect("known id").clone();
    let load = |id: &str| {
        let t = steps_of(id);
        planted_dump(id, t.steps, t.t_star, shape, 4)
    };
    let cfg = ProbeTrainConfig {
        workers: 4,
        ..ProbeTrainConfig::default()
    };
    let mut train_set = build_training_set(&pick(&parts.train), load, &cfg)?;
    let val_set = build_training_set(&pick(&parts.validation), load, &cfg)?;
    println!("train classes before balancing {:?}", train_set.class_counts());
    balance(&mut train_set, cfg.seed);
    println!("train classes after balancing  {:?}", train_set.class_counts());

    let out = train(&train_set, &val_set, &cfg)?;
    println!("\nlr sweep at layer {}", out.reference_layer);
    for c in &out.lr_cells {
        println!("  lr {:<7e} AP {:?}", c.learning_rate, c.validation_ap);
    }
    println!("layer sweep");
    for c in &out.layer_cells {
        println!("  layer {} AP {:?}", c.layer, c.validation_ap);
    }
    let meta = out.probe.meta.as_ref().expect("meta");
    println!(
        "\nchosen layer {} (signal is in layer {}), lr {:e}, validation AP {:.4}",
        out.probe.layer_index, shape.signal_layer, meta.learning_rate, meta.validation_ap
    );
    Ok(())
}
