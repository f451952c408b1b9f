//! Collect a trace and its forced-answer trajectory from a mock endpoint
//! over HTTP.
//!
//! ```text
//! cargo run --example forced_completion_mock
//! ```

use trajgate::client::{EmbeddingBackend, EndpointConfig, HttpClient};
use trajgate::engine::{build_trajectory, collect_trace, DatasetRow, EngineConfig};
use trajgate::mock::{CompletionRule, MockFixture, MockServer, PromptMatch, ScriptedToken};
use trajgate::TaskKind;

fn forced(after: &str, dist: &[(&str, f64)]) -> CompletionRule {
    CompletionRule::new(
        PromptMatch::ends_with(format!("{after}</think>{{\"answer\": \"")),
        vec![
            ScriptedToken::new(dist[0].0, dist[0].1).with_top(dist.to_vec()),
            ScriptedToken::new("\"", -0.01),
        ],
    )
}

fn main() -> trajgate::Result<()> {
    let reasoning = ["Try", " A", ". ", "No", ", ", "B", " fits", ". ", "Done", "."];
    let fixture = MockFixture {
        completions: vec![
            CompletionRule::new(
                PromptMatch::ends_with("Q: pick A or B.\n<think>"),
                reasoning
                    .iter()
                    .chain(&["</think>"])
                    .map(|t| ScriptedToken::new(*t, -0.3))
                    .collect(),
            ),
            forced("<think>", &[("A", -0.2), ("B", -1.8)]),
            forced("Try A. ", &[("A", -0.4), ("B", -1.1)]),
            forced("B fits. ", &[("B", -0.1), ("A", -2.4)]),
            forced("Done.", &[("B", -0.05), ("A", -3.0)]),
        ],
        ..MockFixture::default()
    };
    let server = MockServer::start(fixture)?;
    let client = HttpClient::new(EndpointConfig {
        completion_url: server.completion_url(),
        ..EndpointConfig::default()
    })?;

    let row: DatasetRow = serde_json::from_str(
        r#"{"id": "demo", "task": "mcq", "context": "Q: pick A or B.\n", "gold": "B", "options": ["A", "B"]}"#,
    )
    .expect("valid row");
    assert_eq!(row.task, TaskKind::Mcq);
    let cfg = EngineConfig::default();
    let trace = collect_trace(&client, None::<&dyn EmbeddingBackend>, &row, &cfg)?;
    let traj = build_trajectory(&client, None, &trace, &cfg)?;

    for i in 0..=trace.step_count() {
        println!(
            "A_{i} = {}  T_{i} = {:>2}  after {:?}",
            traj.labels[i].text(),
            traj.cum_tokens[i],
            trace.step_text(i).unwrap_or("")
        );
    }
    println!(
        "final answer {:?}, {} HTTP requests",
        trace.final_answer.map(|a| a.text().to_owned()),
        server.request_count()
    );
    Ok(())
}
