use serde::{Deserialize, Serialize};

use super::model::{base_log_prob, FlowModel};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::nn::{bce_with_logit, sigmoid, Mlp, Parameters};
use crate::par;
use crate::train::{self, Objective, Schedule, TrainReport};

/// Maximum-likelihood training schedule for a [`FlowModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 never stops early.
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 100,
            learning_rate: 1e-4,
            weight_decay: 1e-6,
            seed: 0,
            early_stop_patience: 20,
            validation_fraction: 0.1,
        }
    }
}

impl FlowTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("flow learning_rate must be > 0"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("flow validation_fraction must lie in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("flow batch_size must be >= 1"));
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
}

/// Flow with an optional logistic head on its output, trained on
/// `alpha * BCE + (1 - alpha) * NLL`.
///
/// `alpha == 0` is plain maximum likelihood; `alpha == 1` drops the
/// likelihood term entirely.
pub(crate) struct Hybrid<'a> {
    pub flow: FlowModel,
    pub head: Option<Mlp>,
    pub data: &'a DataMatrix,
    pub labels: Option<&'a [f64]>,
    pub alpha: f64,
}

impl Hybrid<'_> {
    fn n_flow(&self) -> usize {
        self.flow.n_params()
    }

    fn uses_bce(&self) -> bool {
        self.alpha > 0.0 && self.head.is_some()
    }

    fn uses_nll(&self) -> bool {
        self.alpha < 1.0
    }

    fn row_loss(&self, i: usize, grad: Option<&mut [f64]>) -> f64 {
        let x = self.data.row(i);
        let cache = self.flow.forward_cached(x);
        let mut loss = 0.0;
        let mut gz = vec![0.0; self.flow.dim];
        let mut gld = 0.0;
        let n_flow = self.n_flow();
        let mut head_grad: Option<(f64, crate::nn::MlpCache)> = None;

        if self.uses_nll() {
            let nll = -(base_log_prob(&cache.z) + cache.logdet);
            let w = 1.0 - self.alpha;
            loss += w * nll;
            for (g, z) in gz.iter_mut().zip(&cache.z) {
                *g += w * z;
            }
            gld -= w;
        }
        if self.uses_bce() {
            let head = self.head.as_ref().unwrap();
            let y = self.labels.map(|l| l[i]).unwrap_or(0.0);
            let hc = head.forward_cached(&cache.z);
            let logit = hc.acts.last().unwrap()[0];
            loss += self.alpha * bce_with_logit(logit, y);
            head_grad = Some((self.alpha * (sigmoid(logit) - y), hc));
        }
        if let Some(grad) = grad {
            let (gflow, ghead) = grad.split_at_mut(n_flow);
            if let Some((gl, hc)) = head_grad {
                let head = self.head.as_ref().unwrap();
                let gzh = head.backward(&hc, &[gl], ghead, true).unwrap();
                for (g, h) in gz.iter_mut().zip(gzh) {
                    *g += h;
                }
            }
            self.flow.backward(&cache, &gz, gld, gflow);
        }
        loss
    }
}

impl Objective for Hybrid<'_> {
    fn params(&self) -> Vec<f64> {
        let mut p = self.flow.params();
        if let Some(h) = &self.head {
            p.extend(h.params());
        }
        p
    }

    fn set_params(&mut self, p: &[f64]) {
        let n = self.n_flow();
        self.flow.read_params(&p[..n]);
        if let Some(h) = &mut self.head {
            h.read_params(&p[n..]);
        }
    }

    fn loss_grad(&self, rows: &[usize]) -> (f64, Vec<f64>) {
        let len = self.n_flow() + self.head.as_ref().map_or(0, Parameters::n_params);
        par::chunked_sum(rows, len, |chunk, acc| {
            chunk.iter().map(|&i| self.row_loss(i, Some(&mut *acc))).sum()
        })
    }

    fn loss(&self, rows: &[usize]) -> f64 {
        par::chunked_sum(rows, 0, |chunk, _| chunk.iter().map(|&i| self.row_loss(i, None)).sum()).0
    }
}

/// Data-dependent normalizer initialization on the first training batch,
/// then the shared minibatch loop.
pub(crate) fn fit_hybrid(h: &mut Hybrid<'_>, cfg: &FlowTrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if h.data.rows() < cfg.batch_size {
        return Err(Error::config(format!(
            "flow training needs at least batch_size={} rows, got {}",
            cfg.batch_size,
            h.data.rows()
        )));
    }
    if h.data.dim() != h.flow.dim {
        return Err(Error::Dimension {
            expected: h.flow.dim,
            got: h.data.dim(),
        });
    }
    if cfg.epochs > 0 && !h.flow.norms_initialized {
        let (train_rows, _) = train::split(h.data.rows(), cfg.validation_fraction, cfg.seed);
        let first: Vec<usize> = train_rows.into_iter().take(cfg.batch_size.max(2)).collect();
        h.flow.initialize_normalizers(&h.data.select(&first)?)?;
    }
    let n = h.data.rows();
    train::run(h, n, &cfg.schedule())
}

impl FlowModel {
    /// Minimize mean negative log-likelihood of `data`; keeps the parameters
    /// with the best held-out loss.
    pub fn fit(&mut self, data: &DataMatrix, cfg: &FlowTrainConfig) -> Result<TrainReport> {
        let mut h = Hybrid {
            flow: self.clone(),
            head: None,
            data,
            labels: None,
            alpha: 0.0,
        };
        let report = fit_hybrid(&mut h, cfg)?;
        *self = h.flow;
        Ok(report)
    }

    /// Mean negative log-likelihood of `data`.
    pub fn mean_nll(&self, data: &DataMatrix) -> Result<f64> {
        let lp = self.log_prob(data)?;
        Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
    }

    /// Mean negative log-likelihood and its gradient in flat parameter order.
    pub fn nll_grad(&self, data: &DataMatrix) -> (f64, Vec<f64>) {
        let h = Hybrid {
            flow: self.clone(),
            head: None,
            data,
            labels: None,
            alpha: 0.0,
        };
        let rows: Vec<usize> = (0..data.rows()).collect();
        let (l, mut g) = h.loss_grad(&rows);
        let inv = 1.0 / rows.len() as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        (l * inv, g)
    }
}
