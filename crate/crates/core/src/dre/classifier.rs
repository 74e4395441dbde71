use serde::{Deserialize, Serialize};

use super::{check_pair, RatioEstimator, RatioModel};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::nn::{bce_with_logit, sigmoid, Mlp, Parameters};
use crate::par;
use crate::rng;
use crate::train::{self, Objective, Schedule, TrainReport};

/// Probabilistic classifier settings. Empty `hidden_sizes` is logistic regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    pub early_stop_patience: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![100, 100, 100],
            epochs: 100,
            batch_size: 128,
            learning_rate: 2e-4,
            weight_decay: 5e-4,
            seed: 0,
            validation_fraction: 0.1,
            early_stop_patience: 20,
        }
    }
}

impl ClassifierConfig {
    pub fn logistic() -> Self {
        Self {
            hidden_sizes: Vec::new(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("classifier learning_rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("classifier batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("classifier validation_fraction must lie in [0, 1)"));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::config("classifier hidden sizes must be >= 1"));
        }
        Ok(())
    }

    pub(crate) fn schedule(&self) -> Schedule {
        Schedule {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            seed: self.seed,
            patience: self.early_stop_patience,
            validation_fraction: self.validation_fraction,
        }
    }

    pub(crate) fn init_net(&self, dim: usize) -> Mlp {
        Mlp::new(dim, &self.hidden_sizes, 1, &mut rng::stream(self.seed, rng::TAG_INIT))
    }
}

/// Per-row weighted binary cross entropy of an MLP logit.
pub(crate) struct ClassifierObjective<'a> {
    pub net: Mlp,
    pub data: &'a DataMatrix,
    pub labels: &'a [f64],
    pub weights: Option<&'a [f64]>,
}

impl ClassifierObjective<'_> {
    fn row(&self, i: usize, grad: Option<&mut [f64]>) -> f64 {
        let w = self.weights.map_or(1.0, |w| w[i]);
        let y = self.labels[i];
        match grad {
            None => w * bce_with_logit(self.net.forward(self.data.row(i))[0], y),
            Some(g) => {
                let c = self.net.forward_cached(self.data.row(i));
                let logit = c.acts.last().unwrap()[0];
                self.net.backward(&c, &[w * (sigmoid(logit) - y)], g, false);
                w * bce_with_logit(logit, y)
            }
        }
    }
}

impl Objective for ClassifierObjective<'_> {
    fn params(&self) -> Vec<f64> {
        self.net.params()
    }

    fn set_params(&mut self, p: &[f64]) {
        self.net.read_params(p);
    }

    fn loss_grad(&self, rows: &[usize]) -> (f64, Vec<f64>) {
        par::chunked_sum(rows, self.net.n_params(), |chunk, acc| {
            chunk.iter().map(|&i| self.row(i, Some(&mut *acc))).sum()
        })
    }

    fn loss(&self, rows: &[usize]) -> f64 {
        par::chunked_sum(rows, 0, |chunk, _| chunk.iter().map(|&i| self.row(i, None)).sum()).0
    }
}

/// Stack `dp` over `dq` with labels 1 then 0.
pub(crate) fn pooled(dp: &DataMatrix, dq: &DataMatrix) -> Result<(DataMatrix, Vec<f64>)> {
    check_pair(dp, dq)?;
    let x = dp.concat(dq)?;
    let mut y = vec![1.0; dp.rows()];
    y.resize(dp.rows() + dq.rows(), 0.0);
    Ok((x, y))
}

/// Train a `p`-vs-`q` classifier and return `log r = logit + log(n_q / n_p)`.
pub fn fit_classifier(dp: &DataMatrix, dq: &DataMatrix, cfg: &ClassifierConfig) -> Result<(RatioEstimator, TrainReport)> {
    cfg.validate()?;
    let (x, y) = pooled(dp, dq)?;
    let mut obj = ClassifierObjective {
        net: cfg.init_net(x.dim()),
        data: &x,
        labels: &y,
        weights: None,
    };
    let report = train::run(&mut obj, x.rows(), &cfg.schedule())?;
    Ok((
        RatioEstimator::new(
            RatioModel::Classifier { net: obj.net },
            (dq.rows() as f64 / dp.rows() as f64).ln(),
        ),
        report,
    ))
}
