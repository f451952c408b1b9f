#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trajgate::mock::{MockFixture, MockServer};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn golden(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(rel)
}

pub fn trajgate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajgate"))
        .args(args)
        .output()
        .expect("run trajgate")
}

pub fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Compare `actual` with the committed golden file. With `UPDATE_GOLDEN=1`
/// the golden file is rewritten instead.
pub fn assert_golden(actual: &Path, golden_rel: &str) {
    let want = golden(golden_rel);
    let got = std::fs::read(actual).unwrap();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(want.parent().unwrap()).unwrap();
        std::fs::write(&want, &got).unwrap();
        return;
    }
    let expected = std::fs::read(&want).unwrap_or_else(|e| panic!("{}: {e}", want.display()));
    assert!(got == expected, "{} differs from {}", actual.display(), want.display());
}

pub fn start_mock() -> MockServer {
    let fixture = MockFixture::load(&fixture("collect/mock.json")).unwrap();
    MockServer::start(fixture).unwrap()
}

/// Endpoint config pointing at a running mock server.
pub fn endpoint_toml(dir: &Path, server: &MockServer) -> PathBuf {
    let path = dir.join("endpoint.toml");
    std::fs::write(
        &path,
        format!(
            "[endpoint]\ncompletion_url = \"{}\"\nembedding_url = \"{}\"\nretries = 0\nbackoff_ms = 1\nembedding_dim = 8\n",
            server.completion_url(),
            server.embedding_url()
        ),
    )
    .unwrap();
    path
}

/// Write a synthetic trace directory, with planted dumps under `dumps`.
pub fn write_corpus(dir: &Path, task: trajgate::TaskKind, count: usize, seed: u64, dumps: Option<&Path>) {
    use trajgate::datastore::{dump_path, write_dump, write_jsonl};
    use trajgate::synthetic::{corpus, planted_dump, CorpusConfig, DumpShape};

    let items = corpus(&CorpusConfig::new(task, count, seed)).unwrap();
    let (traces, trajs): (Vec<_>, Vec<_>) = items.into_iter().unzip();
    write_jsonl(&dir.join("traces.jsonl"), &traces).unwrap();
    write_jsonl(&dir.join("trajectories.jsonl"), &trajs).unwrap();
    if let Some(dumps) = dumps {
        let eq = trajgate::EquivalenceConfig::default();
        for t in &trajs {
            let t_star = trajgate::metrics::final_switch_index(&t.labels, &eq);
            let d = planted_dump(&t.trace_id, t.steps(), t_star, DumpShape::default(), seed).unwrap();
            write_dump(&dump_path(dumps, &t.trace_id), &d).unwrap();
        }
    }
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn read_tsv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').map(str::to_owned).collect())
        .collect()
}
