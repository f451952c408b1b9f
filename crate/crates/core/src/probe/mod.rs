//! Logistic probe over per-step hidden states: scoring, training-set
//! construction, training and average precision.

mod ap;
mod train;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use ap::average_precision;
pub use train::{bce_gradient, bce_loss, train, train_cell, CellResult, TrainOutcome};

use crate::datastore::HiddenStateDump;
use crate::error::{Error, Result};
use crate::seeds::rng_for;

/// Learning rates searched during training.
pub const DEFAULT_LR_GRID: [f64; 9] = [1e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 1e-1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub validation_ap: f64,
}

/// `m = sigmoid(w·h + b)` over one layer's hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub layer_index: usize,
    #[serde(default)]
    pub meta: Option<TrainingMeta>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ProbeModel {
    pub fn zeros(dim: usize, layer_index: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
            layer_index,
            meta: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().chain([&self.bias]).any(|x| !x.is_finite()) {
            return Err(Error::Data("probe has non-finite parameters".into()));
        }
        Ok(())
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Contract(format!(
                "hidden state has dimension {len}, probe expects {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// The affine form `w·h + b`, summed in index order.
    pub fn logit(&self, h: &[f32]) -> Result<f64> {
        self.check_dim(h.len())?;
        Ok(self.weights.iter().zip(h).map(|(w, x)| w * *x as f64).sum::<f64>() + self.bias)
    }

    pub fn score(&self, h: &[f32]) -> Result<f64> {
        Ok(sigmoid(self.logit(h)?))
    }

    pub fn score_f64(&self, h: &[f64]) -> Result<f64> {
        self.check_dim(h.len())?;
        Ok(sigmoid(
            self.weights.iter().zip(h).map(|(w, x)| w * x).sum::<f64>() + self.bias,
        ))
    }
}

/// Which final-switch index defines probe labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    #[default]
    Raw,
    Denoised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeTrainConfig {
    pub steps_per_trace: usize,
    pub lr_grid: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub label_source: LabelSource,
    /// Hold window used when `label_source` is denoised.
    pub k: usize,
    pub exclude_step_zero: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Layer used for the learning-rate search; defaults to the middle layer.
    pub reference_layer: Option<usize>,
    /// Concurrent grid cells.
    pub workers: usize,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        Self {
            steps_per_trace: 8,
            lr_grid: DEFAULT_LR_GRID.to_vec(),
            epochs: 20,
            batch_size: 256,
            seed: 0,
            label_source: LabelSource::Raw,
            k: crate::metrics::DEFAULT_K,
            exclude_step_zero: false,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            reference_layer: None,
            workers: 1,
        }
    }
}

impl ProbeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_grid.is_empty() {
            return Err(Error::Config("lr_grid is empty".into()));
        }
        if self.steps_per_trace == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "steps_per_trace, epochs and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// What the training-set builder needs to know about one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTarget {
    pub trace_id: String,
    /// Number of reasoning steps `n`; hidden states exist for `0..=n`.
    pub steps: usize,
    pub t_star: isize,
}

/// One sampled step: hidden states at every layer plus its label.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeExample {
    pub trace_id: String,
    pub step: usize,
    pub label: bool,
    /// Layer-major `layer_count * dim` values.
    pub states: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbeDataset {
    pub layer_count: usize,
    pub dim: usize,
    pub examples: Vec<ProbeExample>,
}

impl ProbeDataset {
    pub fn layer(&self, example: usize, layer: usize) -> &[f32] {
        let start = layer * self.dim;
        &self.examples[example].states[start..start + self.dim]
    }

    pub fn labels(&self) -> Vec<bool> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.examples.iter().filter(|e| e.label).count();
        (pos, self.examples.len() - pos)
    }

    pub fn extend(&mut self, other: ProbeDataset) -> Result<()> {
        if self.examples.is_empty() && self.layer_count == 0 {
            *self = other;
            return Ok(());
        }
        if other.examples.is_empty() {
            return Ok(());
        }
        if (other.layer_count, other.dim) != (self.layer_count, self.dim) {
            return Err(Error::Data(format!(
                "cannot merge datasets with shapes {}x{} and {}x{}",
                self.layer_count, self.dim, other.layer_count, other.dim
            )));
        }
        self.examples.extend(other.examples);
        Ok(())
    }
}

/// Steps sampled for one trace: all of them if there are at most `s`,
/// otherwise `s` drawn uniformly without replacement, in ascending order.
pub fn sample_steps(target: &TraceTarget, s: usize, exclude_step_zero: bool, seed: u64) -> Vec<usize> {
    let first = usize::from(exclude_step_zero);
    let available: Vec<usize> = (first..=target.steps).collect();
    if available.len() <= s {
        return available;
    }
    let mut rng = rng_for(seed, &["probe-sample", &target.trace_id]);
    let mut picked: Vec<usize> = index::sample(&mut rng, available.len(), s)
        .into_iter()
        .map(|i| available[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Sample steps per trace and label them: positive iff `i > t*` (every step
/// is positive when `t* = -1`).
///
/// `load_dump` is called once per trace.
pub fn build_training_set(
    targets: &[TraceTarget],
    mut load_dump: impl FnMut(&str) -> Result<HiddenStateDump>,
    cfg: &ProbeTrainConfig,
) -> Result<ProbeDataset> {
    let mut out = ProbeDataset::default();
    for target in targets {
        let steps = sample_steps(target, cfg.steps_per_trace, cfg.exclude_step_zero, cfg.seed);
        if steps.is_empty() {
            continue;
        }
        let dump = load_dump(&target.trace_id).map_err(|e| {
            Error::Data(format!(
                "no hidden states for trace {} step {}: {e}",
                target.trace_id, steps[0]
            ))
        })?;
        if out.examples.is_empty() {
            out.layer_count = dump.layer_count;
            out.dim = dump.hidden_dim;
        } else if (dump.layer_count, dump.hidden_dim) != (out.layer_count, out.dim) {
            return Err(Error::Data(format!(
                "trace {} dump is {}x{}, expected {}x{}",
                target.trace_id, dump.layer_count, dump.hidden_dim, out.layer_count, out.dim
            )));
        }
        for step in steps {
            let states = dump.step(step).ok_or_else(|| {
                Error::Data(format!(
                    "missing hidden state for trace {} step {step} (dump has {} steps)",
                    target.trace_id, dump.step_count
                ))
            })?;
            out.examples.push(ProbeExample {
                trace_id: target.trace_id.clone(),
                step,
                label: step as isize > target.t_star,
                states: states.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Oversample the minority class with replacement until the class counts
/// differ by at most one. Duplicates are appended after the originals.
pub fn balance(dataset: &mut ProbeDataset, seed: u64) {
    let (pos, neg) = dataset.class_counts();
    if pos == 0 || neg == 0 || pos.abs_diff(neg) <= 1 {
        return;
    }
    let minority = neg < pos;
    let pool: Vec<usize> = (0..dataset.examples.len())
        .filter(|&i| dataset.examples[i].label != minority)
        .collect();
    let mut rng = rng_for(seed, &["probe-balance"]);
    let extra: Vec<ProbeExample> = (0..pos.abs_diff(neg))
        .map(|_| dataset.examples[pool[rng.gen_range(0..pool.len())]].clone())
        .collect();
    dataset.examples.extend(extra);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dump(steps: usize, layers: usize, dim: usize) -> HiddenStateDump {
        let data = (0..steps * layers * dim).map(|x| x as f32).collect();
        HiddenStateDump::new(layers, dim, steps, data).unwrap()
    }

    #[test]
    fn score_basics() {
        let p = ProbeModel::zeros(3, 0);
        assert_eq!(p.score(&[1.0, 2.0, 3.0]).unwrap(), 0.5);
        let p = ProbeModel {
            bias: 20.0,
            ..ProbeModel::zeros(3, 0)
        };
        assert!(p.score(&[1.0, 2.0, 3.0]).unwrap() > 0.999999);
        assert!(p.score(&[1.0]).is_err());
    }

    #[test]
    fn labels_follow_final_switch() {
        let cfg = ProbeTrainConfig {
            steps_per_trace: 100,
            ..ProbeTrainConfig::default()
        };
        let t = TraceTarget {
            trace_id: "t".into(),
            steps: 10,
            t_star: 5,
        };
        let ds = build_training_set(&[t], |_| Ok(dump(11, 2, 3)), &cfg).unwrap();
        let labels: Vec<bool> = ds.labels();
        assert_eq!(labels, (0..=10).map(|i| i > 5).collect::<Vec<_>>());
        assert_eq!(ds.layer(7, 1), &[7.0 * 6.0 + 3.0, 7.0 * 6.0 + 4.0, 7.0 * 6.0 + 5.0]);
    }

    #[test]
    fn no_switch_traces_are_all_positive() {
        let cfg = ProbeTrainConfig {
            steps_per_trace: 4,
            ..ProbeTrainConfig::default()
        };
        let t = TraceTarget {
            trace_id: "t".into(),
            steps: 20,
            t_star: -1,
        };
        let ds = build_training_set(&[t], |_| Ok(dump(21, 1, 1)), &cfg).unwrap();
        assert_eq!(ds.class_counts(), (4, 0));
    }

    #[test]
    fn missing_step_is_named() {
        let t = TraceTarget {
            trace_id: "abc".into(),
            steps: 5,
            t_star: 1,
        };
        let err = build_training_set(&[t], |_| Ok(dump(3, 1, 1)), &ProbeTrainConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("abc") && msg.contains("step 3"), "{msg}");
    }

    #[test]
    fn balancing_oversamples_negatives() {
        let mut ds = ProbeDataset {
            layer_count: 1,
            dim: 1,
            examples: (0..40)
                .map(|i| ProbeExample {
                    trace_id: "t".into(),
                    step: i,
                    label: i >= 10,
                    states: vec![i as f32],
                })
                .collect(),
        };
        balance(&mut ds, 9);
        assert_eq!(ds.class_counts(), (30, 30));
        assert!(ds.examples[40..].iter().all(|e| !e.label && e.step < 10));
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let t = TraceTarget {
            trace_id: "x".into(),
            steps: 50,
            t_star: 3,
        };
        let a = sample_steps(&t, 8, false, 1);
        assert_eq!(a.len(), 8);
        assert_eq!(a, sample_steps(&t, 8, false, 1));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(!sample_steps(&t, 100, true, 1).contains(&0));
    }
}
