use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::weights::WeightVector;
use crate::data::{DataMatrix, LabeledData};
use crate::dre::{ClassifierConfig, ClassifierObjective};
use crate::error::{Error, Result};
use crate::nn::{bce_with_logit, sigmoid, Mlp};
use crate::train;

const NEWTON_ITERS: usize = 100;
const RIDGE: f64 = 1e-10;

/// Linear classifier `logit = w·x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LogisticModel {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ErmModel {
    Logistic(LogisticModel),
    Mlp { net: Mlp },
}

impl ErmModel {
    pub fn logit(&self, x: &[f64]) -> f64 {
        match self {
            ErmModel::Logistic(m) => m.logit(x),
            ErmModel::Mlp { net } => net.forward(x)[0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErmResult {
    /// 0/1 error on the test set.
    pub test_error: f64,
    pub model: ErmModel,
}

fn objective(x: &DataMatrix, y: &[f64], sw: &[f64], total: f64, lambda: f64, m: &LogisticModel) -> f64 {
    let data: f64 = x
        .iter_rows()
        .zip(y)
        .zip(sw)
        .filter(|(_, w)| **w > 0.0)
        .map(|((r, y), w)| w * bce_with_logit(m.logit(r), *y))
        .sum();
    data / total + 0.5 * lambda * m.w.iter().map(|v| v * v).sum::<f64>()
}

/// Newton's method on `sum_i s_i BCE_i / sum_i s_i + (lambda/2)|w|^2`.
/// The bias is not penalized.
pub fn fit_weighted_logistic(x: &DataMatrix, y: &[f64], sample_weights: &[f64], lambda: f64) -> Result<LogisticModel> {
    if y.len() != x.rows() || sample_weights.len() != x.rows() {
        return Err(Error::config(format!(
            "{} rows, {} labels, {} weights",
            x.rows(),
            y.len(),
            sample_weights.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::config("logistic penalty must be >= 0"));
    }
    let total: f64 = sample_weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights("sample weights sum to zero".into()));
    }
    let d = x.dim();
    let mut m = LogisticModel { w: vec![0.0; d], b: 0.0 };
    let mut obj = objective(x, y, sample_weights, total, lambda, &m);
    for _ in 0..NEWTON_ITERS {
        let mut g = DVector::<f64>::zeros(d + 1);
        let mut h = DMatrix::<f64>::zeros(d + 1, d + 1);
        for ((r, yi), wi) in x.iter_rows().zip(y).zip(sample_weights) {
            if *wi == 0.0 {
                continue;
            }
            let p = sigmoid(m.logit(r));
            let s = wi / total;
            let c = s * p * (1.0 - p);
            for j in 0..=d {
                let xj = if j < d { r[j] } else { 1.0 };
                g[j] += s * (p - yi) * xj;
                for k in 0..=j {
                    let xk = if k < d { r[k] } else { 1.0 };
                    h[(j, k)] += c * xj * xk;
                }
            }
        }
        for j in 0..=d {
            for k in 0..j {
                h[(k, j)] = h[(j, k)];
            }
            h[(j, j)] += RIDGE;
        }
        for j in 0..d {
            g[j] += lambda * m.w[j];
            h[(j, j)] += lambda;
        }
        let Some(chol) = h.cholesky() else {
            return Err(Error::numeric("fit_weighted_logistic", "Hessian is not positive definite"));
        };
        let step = chol.solve(&g);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..50 {
            let cand = LogisticModel {
                w: m.w.iter().enumerate().map(|(j, w)| w - t * step[j]).collect(),
                b: m.b - t * step[d],
            };
            let c = objective(x, y, sample_weights, total, lambda, &cand);
            if c <= obj {
                next = Some((cand, c));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, c)) = next else { break };
        let moved = step.amax() * t;
        let gain = obj - c;
        m = cand;
        obj = c;
        if moved < 1e-12 || gain <= 1e-15 * (1.0 + obj.abs()) {
            break;
        }
    }
    if !(obj.is_finite() && m.b.is_finite() && m.w.iter().all(|v| v.is_finite())) {
        return Err(Error::numeric("fit_weighted_logistic", "non-finite parameters"));
    }
    Ok(m)
}

fn binary_labels(d: &LabeledData, what: &str) -> Result<Vec<f64>> {
    if !d.is_binary() {
        return Err(Error::config(format!("{what} labels must be 0/1")));
    }
    Ok(d.labels.iter().map(|&y| y as f64).collect())
}

/// Train a classifier on `train` with per-row loss weights and report the
/// 0/1 error on `test`. Empty `hidden_sizes` gives Newton-fitted logistic
/// regression with `weight_decay` as the L2 penalty; otherwise an MLP is
/// trained with the configured schedule.
pub fn weighted_erm(train: &LabeledData, weights: &WeightVector, test: &LabeledData, cfg: &ClassifierConfig) -> Result<ErmResult> {
    cfg.validate()?;
    if weights.len() != train.rows() {
        return Err(Error::config(format!(
            "{} weights for {} training rows",
            weights.len(),
            train.rows()
        )));
    }
    if test.features.dim() != train.features.dim() {
        return Err(Error::Dimension {
            expected: train.features.dim(),
            got: test.features.dim(),
        });
    }
    let y = binary_labels(train, "training")?;
    let y_test = binary_labels(test, "test")?;
    let total: f64 = weights.weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights("weights sum to zero".into()));
    }
    let uniform = weights.weights.iter().all(|w| *w == weights.weights[0]);
    let model = if cfg.hidden_sizes.is_empty() {
        let sw = if uniform { vec![1.0; y.len()] } else { weights.weights.clone() };
        ErmModel::Logistic(fit_weighted_logistic(&train.features, &y, &sw, cfg.weight_decay)?)
    } else {
        // mean-one scaling keeps the step size comparable to unweighted training
        let scaled: Vec<f64> = weights.weights.iter().map(|w| w * y.len() as f64 / total).collect();
        let mut obj = ClassifierObjective {
            net: cfg.init_net(train.features.dim()),
            data: &train.features,
            labels: &y,
            weights: if uniform { None } else { Some(&scaled) },
        };
        train::run(&mut obj, y.len(), &cfg.schedule())?;
        ErmModel::Mlp { net: obj.net }
    };
    let wrong = test
        .features
        .iter_rows()
        .zip(&y_test)
        .filter(|(r, y)| (model.logit(r) > 0.0) != (**y == 1.0))
        .count();
    Ok(ErmResult {
        test_error: wrong as f64 / test.rows().max(1) as f64,
        model,
    })
}
