use rand::seq::SliceRandom;

use super::{average_precision, sigmoid, ProbeDataset, ProbeModel, ProbeTrainConfig, TrainingMeta};
use crate::error::{Error, Result};
use crate::parallel::parallel_map;
use crate::seeds::rng_for;

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn logit_row(w: &[f64], b: f64, row: &[f64]) -> f64 {
    w.iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + b
}

/// Mean binary cross-entropy of `sigmoid(w·x + b)` over row-major `x`
/// (`y.len()` rows of `w.len()` columns).
pub fn bce_loss(w: &[f64], b: f64, x: &[f64], y: &[bool]) -> f64 {
    let d = w.len();
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(r, &label)| {
            let z = logit_row(w, b, &x[r * d..(r + 1) * d]);
            softplus(z) - if label { z } else { 0.0 }
        })
        .sum();
    total / y.len() as f64
}

/// Gradient of [`bce_loss`] with respect to `(w, b)`.
pub fn bce_gradient(w: &[f64], b: f64, x: &[f64], y: &[bool]) -> (Vec<f64>, f64) {
    let rows: Vec<usize> = (0..y.len()).collect();
    let (gw, gb, _) = batch_gradient(w, b, x, y, &rows);
    (gw, gb)
}

/// Mean gradient and loss over the selected rows, accumulated in row order.
fn batch_gradient(w: &[f64], b: f64, x: &[f64], y: &[bool], rows: &[usize]) -> (Vec<f64>, f64, f64) {
    let d = w.len();
    let mut gw = vec![0.0; d];
    let (mut gb, mut loss) = (0.0, 0.0);
    for &r in rows {
        let row = &x[r * d..(r + 1) * d];
        let z = logit_row(w, b, row);
        let target = if y[r] { 1.0 } else { 0.0 };
        let err = sigmoid(z) - target;
        for (g, v) in gw.iter_mut().zip(row) {
            *g += err * v;
        }
        gb += err;
        loss += softplus(z) - target * z;
    }
    let n = rows.len() as f64;
    gw.iter_mut().for_each(|g| *g /= n);
    (gw, gb / n, loss / n)
}

fn layer_matrix(ds: &ProbeDataset, layer: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(ds.examples.len() * ds.dim);
    for i in 0..ds.examples.len() {
        out.extend(ds.layer(i, layer).iter().map(|v| *v as f64));
    }
    out
}

/// One (learning rate, layer) cell of the training grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub learning_rate: f64,
    pub layer: usize,
    /// `None` when training diverged.
    pub probe: Option<ProbeModel>,
    pub validation_ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub probe: ProbeModel,
    pub reference_layer: usize,
    pub lr_cells: Vec<CellResult>,
    pub layer_cells: Vec<CellResult>,
}

/// Train one probe with Adam from zero initialization and score it on the
/// validation set.
pub fn train_cell(
    train: &ProbeDataset,
    validation: &ProbeDataset,
    layer: usize,
    lr: f64,
    cfg: &ProbeTrainConfig,
) -> Result<CellResult> {
    let d = train.dim;
    let x = layer_matrix(train, layer);
    let y = train.labels();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let (mut mw, mut vw) = (vec![0.0; d], vec![0.0; d]);
    let (mut mb, mut vb) = (0.0, 0.0);
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut rng = rng_for(cfg.seed, &["probe-train", &format!("{lr:e}"), &layer.to_string()]);
    let diverged = CellResult {
        learning_rate: lr,
        layer,
        probe: None,
        validation_ap: None,
    };

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (gw, gb, loss) = batch_gradient(&w, b, &x, &y, batch);
            if !loss.is_finite() {
                return Ok(diverged);
            }
            step += 1;
            let c1 = 1.0 - cfg.beta1.powi(step);
            let c2 = 1.0 - cfg.beta2.powi(step);
            for j in 0..d {
                mw[j] = cfg.beta1 * mw[j] + (1.0 - cfg.beta1) * gw[j];
                vw[j] = cfg.beta2 * vw[j] + (1.0 - cfg.beta2) * gw[j] * gw[j];
                w[j] -= lr * (mw[j] / c1) / ((vw[j] / c2).sqrt() + cfg.epsilon);
            }
            mb = cfg.beta1 * mb + (1.0 - cfg.beta1) * gb;
            vb = cfg.beta2 * vb + (1.0 - cfg.beta2) * gb * gb;
            b -= lr * (mb / c1) / ((vb / c2).sqrt() + cfg.epsilon);
        }
    }
    if !bce_loss(&w, b, &x, &y).is_finite() || w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Ok(diverged);
    }

    let probe = ProbeModel {
        weights: w,
        bias: b,
        layer_index: layer,
        meta: None,
    };
    let scores = (0..validation.examples.len())
        .map(|i| probe.score(validation.layer(i, layer)))
        .collect::<Result<Vec<_>>>()?;
    let ap = average_precision(&scores, &validation.labels())?;
    Ok(CellResult {
        learning_rate: lr,
        layer,
        probe: Some(probe),
        validation_ap: Some(ap),
    })
}

/// Best cell by validation AP; ties keep the earliest cell.
fn best(cells: &[CellResult]) -> Option<&CellResult> {
    cells
        .iter()
        .filter(|c| c.validation_ap.is_some())
        .fold(None, |acc: Option<&CellResult>, c| match acc {
            Some(a) if a.validation_ap >= c.validation_ap => Some(a),
            _ => Some(c),
        })
}

/// Learning-rate search at the reference layer, then a layer sweep at the
/// chosen rate. The returned probe is the best layer's.
pub fn train(train: &ProbeDataset, validation: &ProbeDataset, cfg: &ProbeTrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (pos, neg) = train.class_counts();
    if pos == 0 || neg == 0 {
        return Err(Error::Data(format!(
            "training data is single-class ({pos} positive, {neg} negative)"
        )));
    }
    if validation.examples.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    if validation.class_counts().0 == 0 {
        return Err(Error::Data("validation set has no positives".into()));
    }
    if (validation.layer_count, validation.dim) != (train.layer_count, train.dim) {
        return Err(Error::Data("train and validation shapes differ".into()));
    }
    let reference_layer = cfg.reference_layer.unwrap_or(train.layer_count / 2);
    if reference_layer >= train.layer_count {
        return Err(Error::Config(format!(
            "reference layer {reference_layer} out of range for {} layers",
            train.layer_count
        )));
    }

    let workers = cfg.workers.max(1);
    let lr_cells = parallel_map(&cfg.lr_grid, workers, |_, &lr| {
        train_cell(train, validation, reference_layer, lr, cfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let lr = best(&lr_cells)
        .ok_or_else(|| Error::Data("training diverged for every learning rate".into()))?
        .learning_rate;

    let layers: Vec<usize> = (0..train.layer_count).collect();
    let layer_cells = parallel_map(&layers, workers, |_, &layer| {
        train_cell(train, validation, layer, lr, cfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let chosen =
        best(&layer_cells).ok_or_else(|| Error::Data(format!("training diverged on every layer at lr {lr}")))?;

    let mut probe = chosen.probe.clone().expect("best cell has a probe");
    probe.meta = Some(TrainingMeta {
        learning_rate: lr,
        epochs: cfg.epochs,
        seed: cfg.seed,
        validation_ap: chosen.validation_ap.unwrap_or_default(),
    });
    Ok(TrainOutcome {
        probe,
        reference_layer,
        lr_cells,
        layer_cells,
    })
}
