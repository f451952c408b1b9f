//! Deterministic synthetic corpora: traces with answer trajectories, and
//! hidden-state dumps with a planted linear separator. Used by the examples,
//! the fixtures and the property tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::datastore::HiddenStateDump;
use crate::error::Result;
use crate::mock::hash_embedding;
use crate::probe::{ProbeDataset, ProbeExample};
use crate::seeds::rng_for;
use crate::trace::{AnswerLabel, AnswerTrajectory, ByteSpan, TaskKind, TraceRecord};

const WORDS: [&str; 8] = ["so ", "the ", "value ", "is ", "then ", "check ", "again ", "maybe "];
const OPTIONS: [&str; 4] = ["A", "B", "C", "D"];
const TOOLS: [&str; 4] = ["web_search", "calculator", "calendar", "weather"];
const NUMBERS: [&str; 4] = ["12", "7", "42", "3"];
const QUERIES: [&str; 4] = [
    "capital of peru",
    "peru capital city",
    "population of lima",
    "andes highest peak",
];

/// Knobs for [`corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub task: TaskKind,
    pub count: usize,
    pub seed: u64,
    pub max_steps: usize,
    /// Probability that a trace never changes its answer.
    pub stable_rate: f64,
    /// Probability that the final answer is the gold one.
    pub accuracy: f64,
    pub embedding_dim: usize,
}

impl CorpusConfig {
    pub fn new(task: TaskKind, count: usize, seed: u64) -> Self {
        Self {
            task,
            count,
            seed,
            max_steps: 24,
            stable_rate: 0.4,
            accuracy: 0.75,
            embedding_dim: 8,
        }
    }
}

fn answer_pool(task: TaskKind) -> &'static [&'static str] {
    match task {
        TaskKind::Mcq => &OPTIONS,
        TaskKind::Numeric => &NUMBERS,
        TaskKind::ToolSelection => &TOOLS,
        TaskKind::SearchQuery => &QUERIES,
    }
}

fn label(task: TaskKind, text: &str, dim: usize) -> Result<AnswerLabel> {
    match task.label_from_text(text) {
        Some(l) => Ok(l),
        None => AnswerLabel::query(text, hash_embedding(text, dim)),
    }
}

/// Answer indices for steps `0..=n`: a wandering prefix that settles on a
/// final answer at a random step, with occasional single-step flips.
fn answer_path(rng: &mut ChaCha8Rng, n: usize, pool: usize, stable: bool) -> Vec<usize> {
    let last = rng.gen_range(0..pool);
    if stable || n == 0 {
        return vec![last; n + 1];
    }
    let settle = rng.gen_range(1..=n);
    let mut cur = rng.gen_range(0..pool);
    let mut path = Vec::with_capacity(n + 1);
    for i in 0..=n {
        if i >= settle {
            path.push(last);
            continue;
        }
        if rng.gen_bool(0.3) {
            cur = rng.gen_range(0..pool);
        }
        path.push(if rng.gen_bool(0.1) { (cur + 1) % pool } else { cur });
    }
    path
}

/// Traces and their trajectories. Trace `j` has id `{task}-{j:04}`.
pub fn corpus(cfg: &CorpusConfig) -> Result<Vec<(TraceRecord, AnswerTrajectory)>> {
    let pool = answer_pool(cfg.task);
    let mut out = Vec::with_capacity(cfg.count);
    for j in 0..cfg.count {
        let id = format!("{}-{j:04}", cfg.task);
        let mut rng = rng_for(cfg.seed, &["synthetic", &id]);
        let n = rng.gen_range(1..=cfg.max_steps.max(1));

        let mut text = String::new();
        let mut offsets = Vec::new();
        let mut spans = Vec::new();
        let mut cum = vec![0];
        for _ in 0..n {
            let start = text.len();
            for _ in 0..rng.gen_range(3..=40) {
                offsets.push(text.len());
                text.push_str(WORDS[rng.gen_range(0..WORDS.len())]);
            }
            offsets.push(text.len());
            text.push_str("ok. ");
            spans.push(ByteSpan::new(start, text.len()));
            cum.push(offsets.len());
        }

        let stable = rng.gen_bool(cfg.stable_rate);
        let path = answer_path(&mut rng, n, pool.len(), stable);
        let labels = path
            .iter()
            .map(|&k| label(cfg.task, pool[k], cfg.embedding_dim))
            .collect::<Result<Vec<_>>>()?;
        let final_idx = *path.last().unwrap();
        let gold = if rng.gen_bool(cfg.accuracy) {
            final_idx
        } else {
            (final_idx + 1) % pool.len()
        };
        let traj = AnswerTrajectory::new(&id, labels, cum)?;
        let record = TraceRecord {
            id: id.clone(),
            task: cfg.task,
            context: format!("Question {j}?\n"),
            reasoning_text: text,
            step_spans: spans,
            token_offsets: offsets,
            final_answer: traj.last_label().cloned(),
            gold: cfg.task.label_from_text(pool[gold]),
            options: (cfg.task == TaskKind::Mcq).then(|| OPTIONS.iter().map(|s| s.to_string()).collect()),
            tools: (cfg.task == TaskKind::ToolSelection).then(|| TOOLS.iter().map(|s| s.to_string()).collect()),
            flags: Vec::new(),
            extra: Default::default(),
        };
        record.validate()?;
        out.push((record, traj));
    }
    Ok(out)
}

/// A unit direction derived from `seed`, shared by every dump of a corpus.
pub fn planted_direction(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, &["planted-direction"]);
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    v.into_iter().map(|x| x / norm).collect()
}

/// Shape of a planted dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DumpShape {
    pub layers: usize,
    pub dim: usize,
    /// Layer that carries the signal; other layers are noise.
    pub signal_layer: usize,
    /// Signal strength along the planted direction, in noise units.
    pub margin: f64,
}

impl Default for DumpShape {
    fn default() -> Self {
        Self {
            layers: 4,
            dim: 16,
            signal_layer: 2,
            margin: 2.0,
        }
    }
}

/// Hidden states for steps `0..=n` where, at the signal layer, step `i`
/// sits at `+margin` along the planted direction if `i > t*` and at
/// `-margin` otherwise.
pub fn planted_dump(
    trace_id: &str,
    steps: usize,
    t_star: isize,
    shape: DumpShape,
    seed: u64,
) -> Result<HiddenStateDump> {
    let dir = planted_direction(seed, shape.dim);
    let mut rng = rng_for(seed, &["planted-dump", trace_id]);
    let mut data = Vec::with_capacity((steps + 1) * shape.layers * shape.dim);
    for i in 0..=steps {
        let sign = if i as isize > t_star { 1.0 } else { -1.0 };
        for l in 0..shape.layers {
            for v in &dir {
                let noise: f64 = rng.gen_range(-1.0..1.0);
                let x = if l == shape.signal_layer {
                    noise + sign * shape.margin * v
                } else {
                    noise
                };
                data.push(x as f32);
            }
        }
    }
    HiddenStateDump::new(shape.layers, shape.dim, steps + 1, data)
}

/// `count` single-layer points in `[-1, 1]^dim` labelled by the sign of a
/// planted separator, keeping only points at least `gap` from it.
pub fn separable_dataset(count: usize, dim: usize, gap: f64, seed: u64) -> ProbeDataset {
    let dir = planted_direction(seed, dim);
    let mut rng = rng_for(seed, &["separable"]);
    let mut examples = Vec::with_capacity(count);
    while examples.len() < count {
        let h: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let side: f64 = h.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if side.abs() < gap {
            continue;
        }
        examples.push(ProbeExample {
            trace_id: format!("p{}", examples.len()),
            step: 0,
            label: side > 0.0,
            states: h.into_iter().map(|x| x as f32).collect(),
        });
    }
    ProbeDataset {
        layer_count: 1,
        dim,
        examples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_valid_and_deterministic() {
        for task in TaskKind::ALL {
            let cfg = CorpusConfig::new(task, 20, 5);
            let a = corpus(&cfg).unwrap();
            assert_eq!(a, corpus(&cfg).unwrap());
            for (rec, traj) in &a {
                assert_eq!(rec.step_count(), traj.steps());
                assert_eq!(traj.total_tokens(), rec.token_count());
            }
        }
    }

    #[test]
    fn planted_dump_shape() {
        let d = planted_dump("x", 5, 2, DumpShape::default(), 1).unwrap();
        assert_eq!(d.step_count, 6);
        assert_eq!(d.data.len(), 6 * 4 * 16);
    }
}
