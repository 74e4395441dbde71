//! Minibatch AdamW loop with held-out early stopping, shared by the flow,
//! the ratio classifier and joint flow+classifier training.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamW;
use crate::rng;

/// A model plus loss that can be optimized over a fixed set of row indices.
pub(crate) trait Objective: Sync {
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, p: &[f64]);
    /// Summed loss over `rows` and the gradient of that sum.
    fn loss_grad(&self, rows: &[usize]) -> (f64, Vec<f64>);
    /// Summed loss over `rows`.
    fn loss(&self, rows: &[usize]) -> f64;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop after this many epochs without improvement; 0 disables.
    pub patience: usize,
    /// Fraction of rows held out for model selection; 0 monitors the
    /// training rows instead.
    pub validation_fraction: f64,
}

/// Per-epoch losses. `monitor_loss[0]` is measured before the first update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub monitor_loss: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn best_loss(&self) -> f64 {
        self.monitor_loss.get(self.best_epoch).copied().unwrap_or(f64::NAN)
    }
}

/// Deterministic train/validation split of `0..n`.
pub(crate) fn split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if fraction <= 0.0 || n < 2 {
        return (idx, Vec::new());
    }
    idx.shuffle(&mut rng::stream(seed, rng::TAG_SPLIT));
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    (idx, val)
}

pub(crate) fn run(obj: &mut dyn Objective, n_rows: usize, s: &Schedule) -> Result<TrainReport> {
    if s.batch_size == 0 {
        return Err(Error::config("batch_size must be >= 1"));
    }
    if !(s.learning_rate > 0.0) {
        return Err(Error::config("learning_rate must be > 0"));
    }
    let (mut train, val) = split(n_rows, s.validation_fraction, s.seed);
    let monitor_rows = if val.is_empty() { train.clone() } else { val };
    let monitor = |obj: &dyn Objective| obj.loss(&monitor_rows) / monitor_rows.len() as f64;

    let mut report = TrainReport::default();
    let initial = monitor(obj);
    report.monitor_loss.push(initial);
    if s.epochs == 0 {
        return Ok(report);
    }
    if !initial.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            message: "initial loss is not finite".into(),
        });
    }

    let mut params = obj.params();
    let mut best = (initial, params.clone());
    let mut opt = AdamW::new(params.len(), s.learning_rate, s.weight_decay);
    let mut shuffle = rng::stream(s.seed, rng::TAG_SHUFFLE);
    let batch = s.batch_size.min(train.len());

    for epoch in 1..=s.epochs {
        train.shuffle(&mut shuffle);
        let mut total = 0.0;
        for rows in train.chunks(batch) {
            let (loss, mut grad) = obj.loss_grad(rows);
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: "batch loss is not finite".into(),
                });
            }
            total += loss;
            let inv = 1.0 / rows.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            opt.step(&mut params, &grad);
            obj.set_params(&params);
        }
        report.train_loss.push(total / train.len() as f64);
        let m = monitor(obj);
        if !m.is_finite() {
            return Err(Error::Training {
                epoch,
                message: "validation loss is not finite".into(),
            });
        }
        report.monitor_loss.push(m);
        if m < best.0 {
            best = (m, params.clone());
            report.best_epoch = epoch;
        } else if s.patience > 0 && epoch - report.best_epoch >= s.patience {
            break;
        }
    }
    obj.set_params(&best.1);
    Ok(report)
}
