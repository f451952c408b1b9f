//! Write a synthetic trace directory that the `trajgate` subcommands accept.
//!
//! ```text
//! cargo run --example write_corpus -- OUT_DIR [TASK] [COUNT] [SEED] [--dumps]
//! ```
//!
//! With `--dumps`, hidden-state dumps with a planted separator go to
//! `OUT_DIR/dumps/`.

use std::path::PathBuf;

use trajgate::cli::{TRACES_FILE, TRAJECTORIES_FILE};
use trajgate::datastore::{dump_path, write_dump, write_jsonl};
use trajgate::metrics::final_switch_index;
use trajgate::synthetic::{corpus, planted_dump, CorpusConfig, DumpShape};
use trajgate::{EquivalenceConfig, TaskKind};

fn main() -> trajgate::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let with_dumps = args.iter().any(|a| a == "--dumps");
    let pos: Vec<&String> = args.iter().filter(|a| !a.starts_with("--")).collect();
    let out = PathBuf::from(pos.first().map(|s| s.as_str()).unwrap_or("corpus"));
    let task: TaskKind = pos.get(1).map(|s| s.parse()).transpose()?.unwrap_or(TaskKind::Mcq);
    let count = pos.get(2).map(|s| s.parse().expect("COUNT")).unwrap_or(50);
    let seed = pos.get(3).map(|s| s.parse().expect("SEED")).unwrap_or(0);

    let items = corpus(&CorpusConfig::new(task, count, seed))?;
    let (traces, trajs): (Vec<_>, Vec<_>) = items.into_iter().unzip();
    write_jsonl(&out.join(TRACES_FILE), &traces)?;
    write_jsonl(&out.join(TRAJECTORIES_FILE), &trajs)?;

    if with_dumps {
        let eq = EquivalenceConfig::default();
        for traj in &trajs {
            let t_star = final_switch_index(&traj.labels, &eq);
            let dump = planted_dump(&traj.trace_id, traj.steps(), t_star, DumpShape::default(), seed)?;
            write_dump(&dump_path(&out.join("dumps"), &traj.trace_id), &dump)?;
        }
    }
    println!("wrote {count} {task} traces to {}", out.display());
    Ok(())
}
