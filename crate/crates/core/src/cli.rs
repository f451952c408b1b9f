//! The `trajgate` command line: collect, metrics, probe-train, probe-eval
//! and frontier.
//!
//! Exit codes: 0 success, 1 internal or I/O failure, 2 usage, 3 config,
//! 4 data, 5 endpoint.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::client::{EmbeddingBackend, EndpointConfig, GenerationParams, HttpClient};
use crate::datastore::{
    atomic_write, dump_path, read_dataset, read_dump, read_probe, read_traces, read_trajectories, split, to_jsonl,
    write_probe, NonFinitePolicy, Split,
};
use crate::engine::{build_trajectory, collect_trace, DatasetRow, EngineConfig};
use crate::error::{Error, ErrorClass, Result};
use crate::gating::{
    default_tau_grid, evaluate_frontier, oracle_gate, probe_gate, random_gate, FrontierExample, GateKind,
    GateScoreSeries,
};
use crate::metrics::{
    bootstrap_mean_ci, final_switch_index, hold_for_k, metrics_row, summarize, MetricsRow, SmoothingConfig,
};
use crate::parallel::parallel_map;
use crate::probe::{
    average_precision, balance, build_training_set, train, LabelSource, ProbeDataset, ProbeModel, ProbeTrainConfig,
    TraceTarget,
};
use crate::report::{bootstrap_tsv, frontier_tsv, metrics_rows_tsv, plot_data_tsv, summary_tsv};
use crate::segment::SegmentationRules;
use crate::trace::{AnswerTrajectory, EquivalenceConfig, TaskKind, TraceRecord};

pub const TRACES_FILE: &str = "traces.jsonl";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const FAILURES_FILE: &str = "failures.tsv";

#[derive(Debug, Parser)]
#[command(name = "trajgate", version, about = "Answer-trajectory metrics and early-exit gates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample traces and forced-answer trajectories from an endpoint.
    Collect(CollectArgs),
    /// Per-trace metrics, per-task summary and bootstrap intervals.
    Metrics(MetricsArgs),
    /// Train a linear probe on hidden-state dumps.
    ProbeTrain(ProbeTrainArgs),
    /// Report a trained probe's average precision per task and split.
    ProbeEval(ProbeEvalArgs),
    /// Tokens-saved vs. quality frontier for one or more gates.
    Frontier(FrontierArgs),
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// JSONL file of dataset rows.
    #[arg(long)]
    pub dataset: PathBuf,
    /// TOML file with an `[endpoint]` table and an optional `[generation]` table.
    #[arg(long)]
    pub endpoint_config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_inflight: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Directory holding traces.jsonl and trajectories.jsonl.
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Bootstrap resamples; 0 skips the interval file.
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ProbeTrainArgs {
    /// Trace directory; repeat for several tasks.
    #[arg(long, required = true)]
    pub traces: Vec<PathBuf>,
    /// Train one generic probe on the union of the training splits.
    #[arg(long)]
    pub union: bool,
    /// Directory of `<trace id>.hsd` dumps.
    #[arg(long)]
    pub dumps: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// TOML probe configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeEvalArgs {
    #[arg(long)]
    pub probe: PathBuf,
    #[arg(long)]
    pub dumps: PathBuf,
    #[arg(long, required = true)]
    pub traces: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GateArg {
    Random,
    Probe,
    Oracle,
}

impl From<GateArg> for GateKind {
    fn from(g: GateArg) -> Self {
        match g {
            GateArg::Random => GateKind::Random,
            GateArg::Probe => GateKind::Probe,
            GateArg::Oracle => GateKind::Oracle,
        }
    }
}

#[derive(Debug, Args)]
pub struct FrontierArgs {
    #[arg(long)]
    pub traces: PathBuf,
    /// Gate to evaluate; repeatable.
    #[arg(long, value_enum, required = true)]
    pub gate: Vec<GateArg>,
    #[arg(long)]
    pub probe: Option<PathBuf>,
    #[arg(long)]
    pub dumps: Option<PathBuf>,
    /// Comma-separated thresholds; default is 13 quantiles of each gate's scores.
    #[arg(long, value_delimiter = ',')]
    pub tau_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Internal => 1,
        ErrorClass::Config => 3,
        ErrorClass::Data => 4,
        ErrorClass::Endpoint => 5,
    }
}

/// Parse the process arguments, run, and map the outcome to an exit code.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect(a) => collect(&a),
        Command::Metrics(a) => metrics(&a),
        Command::ProbeTrain(a) => probe_train(&a),
        Command::ProbeEval(a) => probe_eval(&a),
        Command::Frontier(a) => frontier(&a),
    }
}

fn read_toml<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Sampling settings read from the `[generation]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_tokens: usize,
    pub top_logprobs: usize,
    pub answer_max_tokens: usize,
    pub step_concurrency: usize,
    pub terminators: Vec<char>,
    pub break_on_blank_line: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let p = GenerationParams::default();
        let e = EngineConfig::default();
        Self {
            temperature: p.temperature,
            max_tokens: p.max_tokens,
            top_logprobs: p.top_logprobs,
            answer_max_tokens: e.answer_max_tokens,
            step_concurrency: e.step_concurrency,
            terminators: e.segmentation.terminators.clone(),
            break_on_blank_line: e.segmentation.break_on_blank_line,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub endpoint: EndpointConfig,
    pub generation: GenerationConfig,
}

impl CollectConfig {
    pub fn engine(&self, seed: Option<u64>) -> EngineConfig {
        let g = &self.generation;
        EngineConfig {
            params: GenerationParams {
                temperature: g.temperature,
                max_tokens: g.max_tokens,
                top_logprobs: g.top_logprobs,
                ..GenerationParams::default()
            },
            answer_max_tokens: g.answer_max_tokens,
            segmentation: SegmentationRules {
                terminators: g.terminators.clone(),
                break_on_blank_line: g.break_on_blank_line,
            },
            embedding_dim: self.endpoint.embedding_dim,
            seed,
            step_concurrency: g.step_concurrency.max(1),
        }
    }
}

fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Config => "config",
        ErrorClass::Data => "data",
        ErrorClass::Endpoint => "endpoint",
        ErrorClass::Internal => "internal",
    }
}

fn read_if_exists<T>(path: &Path, read: impl Fn(&Path) -> Result<Vec<T>>) -> Result<Vec<T>> {
    if path.exists() {
        read(path)
    } else {
        Ok(Vec::new())
    }
}

fn single_line(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// Collect every dataset row not already present in `--out`.
///
/// Finished examples are appended as they complete; at the end both files
/// are rewritten in dataset order. Failed examples go to `failures.tsv`.
/// The command fails only when every attempted example failed.
pub fn collect(args: &CollectArgs) -> Result<()> {
    let mut cfg: CollectConfig = read_toml(Some(&args.endpoint_config))?;
    if let Some(n) = args.max_inflight {
        cfg.endpoint.max_inflight = n;
    }
    let engine = cfg.engine(args.seed);
    engine.params.validate()?;
    let rows = read_dataset(&args.dataset)?;

    fs::create_dir_all(&args.out)?;
    let traces_path = args.out.join(TRACES_FILE);
    let trajs_path = args.out.join(TRAJECTORIES_FILE);
    let mut traces = read_if_exists(&traces_path, read_traces)?;
    let mut trajs = read_if_exists(&trajs_path, read_trajectories)?;
    let have_traj: HashSet<String> = trajs.iter().map(|t| t.trace_id.clone()).collect();
    traces.retain(|t| have_traj.contains(&t.id));
    let done: HashSet<String> = traces.iter().map(|t| t.id.clone()).collect();
    trajs.retain(|t| done.contains(&t.trace_id));

    let pending: Vec<&DatasetRow> = rows.iter().filter(|r| !done.contains(&r.id)).collect();
    eprintln!(
        "collect: {} rows, {} already done, {} to run",
        rows.len(),
        done.len(),
        pending.len()
    );

    let mut failures: Vec<(String, Error)> = Vec::new();
    if !pending.is_empty() {
        let client = HttpClient::new(cfg.endpoint.clone())?;
        let embedder: Option<&dyn EmbeddingBackend> = cfg.endpoint.embedding_url.as_ref().map(|_| &client as _);
        // Rewrite the kept records so the append log starts consistent.
        atomic_write(&traces_path, &to_jsonl(&traces)?)?;
        atomic_write(&trajs_path, &to_jsonl(&trajs)?)?;
        let open = |p: &Path| OpenOptions::new().append(true).open(p);
        let sink = Mutex::new((open(&traces_path)?, open(&trajs_path)?));

        let results = parallel_map(&pending, cfg.endpoint.max_inflight, |_, row| {
            let trace = collect_trace(&client, embedder, row, &engine)?;
            let traj = build_trajectory(&client, embedder, &trace, &engine)?;
            let mut files = sink.lock().unwrap();
            files.0.write_all(&to_jsonl(std::slice::from_ref(&trace))?)?;
            files.1.write_all(&to_jsonl(std::slice::from_ref(&traj))?)?;
            Ok::<_, Error>((trace, traj))
        });
        for (row, res) in pending.iter().zip(results) {
            match res {
                Ok((trace, traj)) => {
                    traces.push(trace);
                    trajs.push(traj);
                }
                Err(e) => failures.push((row.id.clone(), e)),
            }
        }
    }

    let order: HashMap<&str, usize> = rows.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let rank = |id: &str| order.get(id).copied().unwrap_or(usize::MAX);
    traces.sort_by_key(|t| rank(&t.id));
    trajs.sort_by_key(|t| rank(&t.trace_id));
    atomic_write(&traces_path, &to_jsonl(&traces)?)?;
    atomic_write(&trajs_path, &to_jsonl(&trajs)?)?;

    let mut report = String::from("id\tclass\terror\n");
    for (id, e) in &failures {
        report.push_str(&format!(
            "{id}\t{}\t{}\n",
            class_name(e.class()),
            single_line(&e.to_string())
        ));
    }
    atomic_write(&args.out.join(FAILURES_FILE), report.as_bytes())?;
    eprintln!("collect: {} written, {} failed", traces.len(), failures.len());

    if !pending.is_empty() && failures.len() == pending.len() {
        return Err(failures.swap_remove(0).1);
    }
    Ok(())
}

/// A trace directory joined with its trajectories, in trace-file order.
pub struct Run {
    pub dir: PathBuf,
    pub items: Vec<(TraceRecord, AnswerTrajectory)>,
}

impl Run {
    pub fn load(dir: &Path) -> Result<Self> {
        let traces = read_traces(&dir.join(TRACES_FILE))?;
        let mut trajs: HashMap<String, AnswerTrajectory> = read_trajectories(&dir.join(TRAJECTORIES_FILE))?
            .into_iter()
            .map(|t| (t.trace_id.clone(), t))
            .collect();
        let items = traces
            .into_iter()
            .map(|t| {
                let traj = trajs
                    .remove(&t.id)
                    .ok_or_else(|| Error::Data(format!("trace {} has no trajectory", t.id)))?;
                if traj.steps() != t.step_count() {
                    return Err(Error::Data(format!(
                        "trace {} has {} steps but its trajectory has {}",
                        t.id,
                        t.step_count(),
                        traj.steps()
                    )));
                }
                Ok((t, traj))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(id) = trajs.keys().min() {
            return Err(Error::Data(format!("trajectory {id} has no trace")));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            items,
        })
    }

    pub fn by_task(&self) -> BTreeMap<TaskKind, Vec<&(TraceRecord, AnswerTrajectory)>> {
        let mut out: BTreeMap<TaskKind, Vec<_>> = BTreeMap::new();
        for item in &self.items {
            out.entry(item.0.task).or_default().push(item);
        }
        out
    }

    /// The single task of this run.
    pub fn task(&self) -> Result<TaskKind> {
        let tasks: Vec<TaskKind> = self.by_task().into_keys().collect();
        match tasks.as_slice() {
            [t] => Ok(*t),
            [] => Err(Error::Data(format!("{} has no traces", self.dir.display()))),
            _ => Err(Error::Data(format!("{} mixes tasks {tasks:?}", self.dir.display()))),
        }
    }
}

type RowValue = fn(&MetricsRow) -> f64;

pub fn metrics(args: &MetricsArgs) -> Result<()> {
    let eq = EquivalenceConfig::new(args.gamma).map_err(|e| Error::Config(e.to_string()))?;
    let smoothing = SmoothingConfig::new(args.k).map_err(|e| Error::Config(e.to_string()))?;
    let run = Run::load(&args.traces)?;
    let rows = run
        .items
        .iter()
        .map(|(t, traj)| metrics_row(traj, t.final_answer.as_ref(), &eq, &smoothing))
        .collect::<Result<Vec<_>>>()?;

    let mut summaries = Vec::new();
    let mut cis = Vec::new();
    for task in TaskKind::ALL {
        let task_rows: Vec<MetricsRow> = run
            .items
            .iter()
            .zip(&rows)
            .filter(|((t, _), _)| t.task == task)
            .map(|(_, r)| r.clone())
            .collect();
        if task_rows.is_empty() {
            continue;
        }
        summaries.push((task, summarize(&task_rows)?));
        if args.bootstrap > 0 {
            let series: [(&str, RowValue); 6] = [
                ("pr_no_switch_raw_pct", |r| if r.t_star_raw == -1 { 100.0 } else { 0.0 }),
                ("switches_raw", |r| r.switches_raw as f64),
                ("switches_denoised", |r| r.switches_denoised as f64),
                ("tafs", |r| r.tafs as f64),
                ("t_after_raw", |r| r.t_after_raw as f64),
                ("t_after_denoised", |r| r.t_after_denoised as f64),
            ];
            for (name, f) in series {
                let values: Vec<f64> = task_rows.iter().map(f).collect();
                let seed = crate::seeds::derive_seed(args.seed, &[task.as_str(), name]);
                cis.push((task, name, bootstrap_mean_ci(&values, args.bootstrap, 0.95, seed)?));
            }
        }
    }

    fs::create_dir_all(&args.out)?;
    atomic_write(&args.out.join("metrics.tsv"), metrics_rows_tsv(&rows).as_bytes())?;
    atomic_write(&args.out.join("summary.tsv"), summary_tsv(&summaries).as_bytes())?;
    if args.bootstrap > 0 {
        atomic_write(&args.out.join("bootstrap.tsv"), bootstrap_tsv(&cis).as_bytes())?;
    }
    eprintln!("metrics: {} traces, {} tasks", rows.len(), summaries.len());
    Ok(())
}

/// Probe training and evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeFileConfig {
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub gamma: f64,
    pub probe: ProbeTrainConfig,
}

impl Default for ProbeFileConfig {
    fn default() -> Self {
        Self {
            split: [0.8, 0.1, 0.1],
            gamma: 0.9,
            probe: ProbeTrainConfig::default(),
        }
    }
}

impl ProbeFileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: Self = read_toml(path)?;
        cfg.probe.validate()?;
        EquivalenceConfig::new(cfg.gamma).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn split_run(&self, run: &Run, seed: u64) -> Result<Split> {
        let ids: Vec<String> = run.items.iter().map(|(t, _)| t.id.clone()).collect();
        let [a, b, c] = self.split;
        split(&ids, (a, b, c), seed)
    }

    fn targets(&self, run: &Run, ids: &[String]) -> Vec<TraceTarget> {
        let eq = EquivalenceConfig { gamma: self.gamma };
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        run.items
            .iter()
            .filter(|(t, _)| wanted.contains(t.id.as_str()))
            .map(|(t, traj)| {
                let t_star = match self.probe.label_source {
                    LabelSource::Raw => final_switch_index(&traj.labels, &eq),
                    LabelSource::Denoised => final_switch_index(&hold_for_k(&traj.labels, &eq, self.probe.k), &eq),
                };
                TraceTarget {
                    trace_id: t.id.clone(),
                    steps: traj.steps(),
                    t_star,
                }
            })
            .collect()
    }

    fn dataset(&self, targets: &[TraceTarget], dumps: &Path) -> Result<ProbeDataset> {
        build_training_set(
            targets,
            |id| read_dump(&dump_path(dumps, id), NonFinitePolicy::Reject),
            &self.probe,
        )
    }
}

#[derive(Serialize)]
struct SplitRecord<'a> {
    task: TaskKind,
    train: &'a [String],
    validation: &'a [String],
    test: &'a [String],
}

pub fn probe_train(args: &ProbeTrainArgs) -> Result<()> {
    let cfg = ProbeFileConfig::load(args.config.as_deref())?;
    let runs = args.traces.iter().map(|d| Run::load(d)).collect::<Result<Vec<_>>>()?;
    let mut groups: Vec<(String, ProbeDataset, ProbeDataset)> = Vec::new();
    let mut split_log = Vec::new();
    for run in &runs {
        let task = run.task()?;
        let s = cfg.split_run(run, args.split_seed)?;
        let train_set = cfg.dataset(&cfg.targets(run, &s.train), &args.dumps)?;
        let val_set = cfg.dataset(&cfg.targets(run, &s.validation), &args.dumps)?;
        split_log.push((task, s));
        let name = task.to_string();
        if args.union && !groups.is_empty() {
            let g = &mut groups[0];
            g.1.extend(train_set)?;
            g.2.extend(val_set)?;
        } else {
            if groups.iter().any(|g| g.0 == name) {
                return Err(Error::Config(format!(
                    "two trace directories hold task {name}; pass --union for one probe"
                )));
            }
            groups.push((if args.union { "generic".into() } else { name }, train_set, val_set));
        }
    }

    fs::create_dir_all(&args.out)?;
    let mut report = String::from("probe\tstage\tlearning_rate\tlayer\tvalidation_ap\n");
    for (name, mut train_set, val_set) in groups {
        balance(&mut train_set, cfg.probe.seed);
        let outcome = train(&train_set, &val_set, &cfg.probe)?;
        for (stage, cells) in [("lr", &outcome.lr_cells), ("layer", &outcome.layer_cells)] {
            for c in cells {
                report.push_str(&format!(
                    "{name}\t{stage}\t{:e}\t{}\t{}\n",
                    c.learning_rate,
                    c.layer,
                    c.validation_ap
                        .map(crate::report::fmt_f)
                        .unwrap_or_else(|| "diverged".into())
                ));
            }
        }
        let meta = outcome.probe.meta.clone().expect("train fills meta");
        write_probe(&args.out.join(format!("{name}.prb")), &outcome.probe)?;
        atomic_write(
            &args.out.join(format!("{name}.json")),
            serde_json::to_string_pretty(&meta)
                .map_err(|e| Error::Format(e.to_string()))?
                .as_bytes(),
        )?;
        eprintln!(
            "probe-train: {name}: layer {} lr {:e} validation AP {:.4}",
            outcome.probe.layer_index, meta.learning_rate, meta.validation_ap
        );
    }
    atomic_write(&args.out.join("train_report.tsv"), report.as_bytes())?;
    let records: Vec<SplitRecord> = split_log
        .iter()
        .map(|(task, s)| SplitRecord {
            task: *task,
            train: &s.train,
            validation: &s.validation,
            test: &s.test,
        })
        .collect();
    atomic_write(&args.out.join("splits.jsonl"), &to_jsonl(&records)?)?;
    Ok(())
}

fn probe_ap(probe: &ProbeModel, ds: &ProbeDataset) -> Result<Option<f64>> {
    if ds.class_counts().0 == 0 {
        return Ok(None);
    }
    let scores = (0..ds.examples.len())
        .map(|i| probe.score(ds.layer(i, probe.layer_index)))
        .collect::<Result<Vec<_>>>()?;
    average_precision(&scores, &ds.labels()).map(Some)
}

pub fn probe_eval(args: &ProbeEvalArgs) -> Result<()> {
    let cfg = ProbeFileConfig::load(args.config.as_deref())?;
    let probe = read_probe(&args.probe)?;
    let mut out = String::from("task\tsplit\tlayer\tn\tpositive_rate\tap\n");
    for dir in &args.traces {
        let run = Run::load(dir)?;
        let task = run.task()?;
        let s = cfg.split_run(&run, args.split_seed)?;
        for (name, ids) in [("validation", &s.validation), ("test", &s.test)] {
            let ds = cfg.dataset(&cfg.targets(&run, ids), &args.dumps)?;
            if ds.examples.is_empty() {
                continue;
            }
            if ds.dim != probe.dim() || probe.layer_index >= ds.layer_count {
                return Err(Error::Data(format!(
                    "probe reads layer {} of width {}, dumps are {}x{}",
                    probe.layer_index,
                    probe.dim(),
                    ds.layer_count,
                    ds.dim
                )));
            }
            let (pos, _) = ds.class_counts();
            out.push_str(&format!(
                "{task}\t{name}\t{}\t{}\t{}\t{}\n",
                probe.layer_index,
                ds.examples.len(),
                crate::report::fmt_f(pos as f64 / ds.examples.len() as f64),
                probe_ap(&probe, &ds)?
                    .map(crate::report::fmt_f)
                    .unwrap_or_else(|| "NA".into())
            ));
        }
    }
    match &args.out {
        Some(p) => atomic_write(p, out.as_bytes()),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

pub fn frontier(args: &FrontierArgs) -> Result<()> {
    let eq = EquivalenceConfig::new(args.gamma).map_err(|e| Error::Config(e.to_string()))?;
    let run = Run::load(&args.traces)?;
    let probe = match (args.gate.contains(&GateArg::Probe), &args.probe, &args.dumps) {
        (false, _, _) => None,
        (true, Some(p), Some(_)) => Some(read_probe(p)?),
        (true, _, _) => return Err(Error::Config("the probe gate needs --probe and --dumps".into())),
    };
    if let Some(grid) = &args.tau_grid {
        if grid.is_empty() || grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("tau values must lie in [0, 1]".into()));
        }
    }

    fs::create_dir_all(&args.out)?;
    for (task, items) in run.by_task() {
        let mut rows = Vec::new();
        for &gate in &args.gate {
            let series = items
                .iter()
                .map(|(t, traj)| match gate {
                    GateArg::Random => Ok(random_gate(&t.id, traj.steps(), args.seed)),
                    GateArg::Oracle => Ok(oracle_gate(traj, &eq)),
                    GateArg::Probe => {
                        let dumps = args.dumps.as_deref().expect("checked above");
                        let dump = read_dump(&dump_path(dumps, &t.id), NonFinitePolicy::Reject)?;
                        probe_gate(probe.as_ref().expect("checked above"), &t.id, &dump)
                    }
                })
                .collect::<Result<Vec<GateScoreSeries>>>()?;
            let grid = match &args.tau_grid {
                Some(g) => g.clone(),
                None => default_tau_grid(&series)?,
            };
            let examples: Vec<FrontierExample> = items
                .iter()
                .zip(&series)
                .map(|((t, traj), s)| FrontierExample {
                    trajectory: traj,
                    scores: s,
                    gold: t.gold.as_ref().map(|g| g.text()),
                })
                .collect();
            for row in evaluate_frontier(&examples, &grid, task)? {
                rows.push((GateKind::from(gate), row));
            }
        }
        atomic_write(
            &args.out.join(format!("frontier-{task}.tsv")),
            frontier_tsv(task, &rows).as_bytes(),
        )?;
        atomic_write(
            &args.out.join(format!("plot-{task}.tsv")),
            plot_data_tsv(&rows).as_bytes(),
        )?;
        eprintln!("frontier: {task}: {} examples, {} rows", items.len(), rows.len());
    }
    Ok(())
}
