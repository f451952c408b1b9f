mod common;

use common::*;

#[test]
fn collect_against_mock_matches_golden() {
    let server = start_mock();
    let dir = tempfile::tempdir().unwrap();
    let cfg = endpoint_toml(dir.path(), &server);
    let out = dir.path().join("run");
    let dataset = fixture("collect/dataset.jsonl");
    let args = [
        "collect",
        "--dataset",
        dataset.to_str().unwrap(),
        "--endpoint-config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
    ];
    ok(&trajgate(&args));
    assert_golden(&out.join("traces.jsonl"), "collect/traces.jsonl");
    assert_golden(&out.join("trajectories.jsonl"), "collect/trajectories.jsonl");
    assert_eq!(
        std::fs::read_to_string(out.join("failures.tsv")).unwrap(),
        "id\tclass\terror\n"
    );

    let before = server.request_count();
    ok(&trajgate(&args));
    assert_eq!(server.request_count(), before, "resume issued new requests");
    assert_golden(&out.join("traces.jsonl"), "collect/traces.jsonl");
}

#[test]
fn collect_empty_dataset_succeeds() {
    let server = start_mock();
    let dir = tempfile::tempdir().unwrap();
    let cfg = endpoint_toml(dir.path(), &server);
    let data = dir.path().join("empty.jsonl");
    std::fs::write(&data, "").unwrap();
    let out = dir.path().join("run");
    ok(&trajgate(&[
        "collect",
        "--dataset",
        s(&data),
        "--endpoint-config",
        s(&cfg),
        "--out",
        s(&out),
    ]));
    assert_eq!(std::fs::read_to_string(out.join("traces.jsonl")).unwrap(), "");
    assert_eq!(std::fs::read_to_string(out.join("trajectories.jsonl")).unwrap(), "");
    assert_eq!(server.request_count(), 0);
}

#[test]
fn collect_unreachable_endpoint_exits_with_endpoint_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("endpoint.toml");
    // Port 9 (discard) on localhost is closed in the sandbox and on CI.
    std::fs::write(
        &cfg,
        "[endpoint]\ncompletion_url = \"http://127.0.0.1:9/v1/completions\"\nretries = 1\nbackoff_ms = 1\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let data = fixture("collect/dataset.jsonl");
    let res = trajgate(&[
        "collect",
        "--dataset",
        s(&data),
        "--endpoint-config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(5), "{}", String::from_utf8_lossy(&res.stderr));
    let failures = read_tsv(&out.join("failures.tsv"));
    assert_eq!(failures.len(), 6);
    assert!(failures[1..].iter().all(|r| r[1] == "endpoint"));
}

#[test]
fn bad_config_and_usage_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("endpoint.toml");
    std::fs::write(&cfg, "[endpoint]\nno_such_key = 1\n").unwrap();
    let data = fixture("collect/dataset.jsonl");
    let res = trajgate(&[
        "collect",
        "--dataset",
        s(&data),
        "--endpoint-config",
        s(&cfg),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(res.status.code(), Some(3));
    assert_eq!(trajgate(&["frontier", "--bogus"]).status.code(), Some(2));
    let res = trajgate(&[
        "metrics",
        "--traces",
        s(&fixture("metrics5")),
        "--k",
        "0",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(res.status.code(), Some(3));
}

fn run_metrics(traces: &std::path::Path, out: &std::path::Path, extra: &[&str]) {
    let mut args = vec!["metrics", "--traces", s(traces), "--out", s(out), "--seed", "3"];
    args.extend_from_slice(extra);
    ok(&trajgate(&args));
}

#[test]
fn metrics_fixture_matches_golden_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        run_metrics(&fixture("metrics5"), &out, &[]);
        for f in ["summary.tsv", "metrics.tsv", "bootstrap.tsv"] {
            assert_golden(&out.join(f), &format!("metrics/{f}"));
        }
    }
}

#[test]
fn metrics_with_k1_leaves_trajectories_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    run_metrics(&fixture("frontier50"), dir.path(), &["--k", "1", "--bootstrap", "0"]);
    let rows = read_tsv(&dir.path().join("metrics.tsv"));
    let col = |name: &str| rows[0].iter().position(|h| h == name).unwrap();
    for r in &rows[1..] {
        assert_eq!(r[col("t_star_raw")], r[col("t_star_denoised")]);
        assert_eq!(r[col("switches_raw")], r[col("switches_denoised")]);
    }
    assert!(!dir.path().join("bootstrap.tsv").exists());
}

#[test]
fn stricter_gamma_never_lowers_switch_counts() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("search");
    write_corpus(&traces, trajgate::TaskKind::SearchQuery, 40, 2, None);
    let (loose, strict) = (dir.path().join("g09"), dir.path().join("g10"));
    run_metrics(&traces, &loose, &["--gamma", "0.9", "--bootstrap", "0"]);
    run_metrics(&traces, &strict, &["--gamma", "1.0", "--bootstrap", "0"]);
    let (a, b) = (
        read_tsv(&loose.join("metrics.tsv")),
        read_tsv(&strict.join("metrics.tsv")),
    );
    let col = a[0].iter().position(|h| h == "switches_raw").unwrap();
    for (x, y) in a[1..].iter().zip(&b[1..]) {
        assert!(y[col].parse::<usize>().unwrap() >= x[col].parse::<usize>().unwrap());
    }
}

#[test]
fn frontier_fixture_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(&trajgate(&[
            "frontier",
            "--traces",
            s(&fixture("frontier50")),
            "--gate",
            "random",
            "--gate",
            "oracle",
            "--seed",
            "5",
            "--out",
            s(&out),
        ]));
        assert_golden(&out.join("frontier-mcq.tsv"), "frontier/frontier-mcq.tsv");
        assert_golden(&out.join("plot-mcq.tsv"), "frontier/plot-mcq.tsv");
    }
}

#[test]
fn random_gate_at_tau_one_never_stops() {
    let dir = tempfile::tempdir().unwrap();
    ok(&trajgate(&[
        "frontier",
        "--traces",
        s(&fixture("frontier50")),
        "--gate",
        "random",
        "--tau-grid",
        "0.2,0.5,1.0",
        "--out",
        s(dir.path()),
    ]));
    let rows = read_tsv(&dir.path().join("frontier-mcq.tsv"));
    let last = rows.last().unwrap();
    assert_eq!(last[5], "1.0000");
    assert_eq!((last[2].as_str(), last[3].as_str()), ("0.0000", "0.0000"));
}

#[test]
fn oracle_frontier_has_no_accuracy_drop_at_tau_one() {
    let dir = tempfile::tempdir().unwrap();
    ok(&trajgate(&[
        "frontier",
        "--traces",
        s(&fixture("frontier50")),
        "--gate",
        "oracle",
        "--tau-grid",
        "1.0",
        "--out",
        s(dir.path()),
    ]));
    run_metrics(&fixture("frontier50"), &dir.path().join("m"), &["--bootstrap", "0"]);
    let row = &read_tsv(&dir.path().join("frontier-mcq.tsv"))[1];
    let summary = &read_tsv(&dir.path().join("m/summary.tsv"));
    let col = summary[0].iter().position(|h| h == "t_after_raw").unwrap();
    assert_eq!(row[2], "0.0000");
    assert_eq!(row[3], summary[1][col]);
}

#[test]
fn probe_gate_requires_probe_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let res = trajgate(&[
        "frontier",
        "--traces",
        s(&fixture("frontier50")),
        "--gate",
        "probe",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn probe_train_union_and_eval_per_task() {
    let dir = tempfile::tempdir().unwrap();
    let dumps = dir.path().join("dumps");
    let (mcq, tool) = (dir.path().join("mcq"), dir.path().join("tool"));
    write_corpus(&mcq, trajgate::TaskKind::Mcq, 120, 1, Some(&dumps));
    write_corpus(&tool, trajgate::TaskKind::ToolSelection, 120, 1, Some(&dumps));
    let cfg = dir.path().join("probe.toml");
    std::fs::write(
        &cfg,
        "split = [0.6, 0.2, 0.2]\n[probe]\nlr_grid = [0.01, 0.1]\nepochs = 10\n",
    )
    .unwrap();
    let out = dir.path().join("probes");

    ok(&trajgate(&[
        "probe-train",
        "--traces",
        s(&mcq),
        "--traces",
        s(&tool),
        "--union",
        "--dumps",
        s(&dumps),
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--split-seed",
        "4",
    ]));
    let probe = trajgate::datastore::read_probe(&out.join("generic.prb")).unwrap();
    assert_eq!(probe.layer_index, 2);
    let meta: trajgate::probe::TrainingMeta =
        serde_json::from_str(&std::fs::read_to_string(out.join("generic.json")).unwrap()).unwrap();
    assert!(meta.validation_ap >= 0.99, "{meta:?}");

    let report = out.join("eval.tsv");
    ok(&trajgate(&[
        "probe-eval",
        "--probe",
        s(&out.join("generic.prb")),
        "--dumps",
        s(&dumps),
        "--traces",
        s(&mcq),
        "--traces",
        s(&tool),
        "--config",
        s(&cfg),
        "--split-seed",
        "4",
        "--out",
        s(&report),
    ]));
    let rows = read_tsv(&report);
    let tasks: std::collections::BTreeSet<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(tasks, ["mcq", "tool_selection"].into_iter().collect());
    for r in &rows[1..] {
        assert!(r[5].parse::<f64>().unwrap() >= 0.98, "{r:?}");
    }

    // Per-task training writes one probe per task.
    let per_task = dir.path().join("per_task");
    ok(&trajgate(&[
        "probe-train",
        "--traces",
        s(&mcq),
        "--traces",
        s(&tool),
        "--dumps",
        s(&dumps),
        "--config",
        s(&cfg),
        "--out",
        s(&per_task),
    ]));
    assert!(per_task.join("mcq.prb").exists() && per_task.join("tool_selection.prb").exists());

    // The probe gate runs on the same dumps.
    let fr = dir.path().join("frontier");
    ok(&trajgate(&[
        "frontier",
        "--traces",
        s(&mcq),
        "--gate",
        "probe",
        "--probe",
        s(&out.join("generic.prb")),
        "--dumps",
        s(&dumps),
        "--out",
        s(&fr),
    ]));
    assert_eq!(read_tsv(&fr.join("frontier-mcq.tsv")).len(), 14);
}

#[test]
fn probe_train_names_missing_dump_step() {
    let dir = tempfile::tempdir().unwrap();
    let dumps = dir.path().join("dumps");
    let traces = dir.path().join("mcq");
    write_corpus(&traces, trajgate::TaskKind::Mcq, 20, 1, Some(&dumps));
    // Cut every dump down to step 0 only.
    let trajs = trajgate::datastore::read_trajectories(&traces.join("trajectories.jsonl")).unwrap();
    for t in &trajs {
        let short = trajgate::synthetic::planted_dump(&t.trace_id, 0, -1, Default::default(), 0).unwrap();
        trajgate::datastore::write_dump(&trajgate::datastore::dump_path(&dumps, &t.trace_id), &short).unwrap();
    }
    let res = trajgate(&[
        "probe-train",
        "--traces",
        s(&traces),
        "--dumps",
        s(&dumps),
        "--out",
        s(&dir.path().join("o")),
        "--split-seed",
        "0",
    ]);
    let err = String::from_utf8_lossy(&res.stderr);
    assert_eq!(res.status.code(), Some(4), "{err}");
    assert!(
        err.contains("missing hidden state for trace mcq-00") && err.contains(" step "),
        "{err}"
    );
}
