//! Write and re-read the binary hidden-state dump and probe formats, and a
//! trace file with an extra key.
//!
//! ```text
//! cargo run --example dump_formats
//! ```

use trajgate::datastore::{
    probe_to_bytes, read_dump, read_probe, read_traces, write_dump, write_probe, write_traces, HiddenStateDump,
    NonFinitePolicy,
};
use trajgate::probe::ProbeModel;
use trajgate::synthetic::{corpus, CorpusConfig};
use trajgate::TaskKind;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" ")
}

fn main() -> trajgate::Result<()> {
    let dir = std::env::temp_dir().join(format!("trajgate-formats-{}", std::process::id()));

    let dump = HiddenStateDump::new(2, 3, 2, (0..12).map(|x| x as f32 * 0.5).collect())?;
    let path = dir.join("example.hsd");
    write_dump(&path, &dump)?;
    let bytes = std::fs::read(&path)?;
    println!("HSD1 header  {}", hex(&bytes[..20]));
    println!("HSD1 size    {} bytes", bytes.len());
    assert_eq!(read_dump(&path, NonFinitePolicy::Reject)?, dump);
    println!("step 1 layer 0 = {:?}", dump.state(1, 0).unwrap());

    let probe = ProbeModel {
        weights: vec![0.5, -1.0, 2.0],
        bias: -0.25,
        layer_index: 1,
        meta: None,
    };
    write_probe(&dir.join("example.prb"), &probe)?;
    println!("PRB1 bytes   {}", hex(&probe_to_bytes(&probe)[..16]));
    assert_eq!(read_probe(&dir.join("example.prb"))?, probe);

    let mut traces: Vec<_> = corpus(&CorpusConfig::new(TaskKind::ToolSelection, 3, 0))?
        .into_iter()
        .map(|(t, _)| t)
        .collect();
    traces[0]
        .extra
        .insert("annotator".into(), serde_json::json!("kept as is"));
    write_traces(&dir.join("traces.jsonl"), &traces)?;
    let back = read_traces(&dir.join("traces.jsonl"))?;
    assert_eq!(back, traces);
    println!("trace extra key survives: {}", back[0].extra["annotator"]);

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
