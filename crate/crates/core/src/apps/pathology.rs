use serde::{Deserialize, Serialize};

use super::erm::fit_weighted_logistic;
use crate::data::{gen_gaussian_pair, DataMatrix, GaussianPairSpec};
use crate::dre::{fit_classifier, pooled, ClassifierConfig, LogRatio};
use crate::error::{Error, Result};
use crate::flow::{FlowArch, FlowModel, FlowTrainConfig};
use crate::par;
use crate::stats;

/// Sample size below which, with probability `delta`, the two classes of
/// `N(±m, 1)` fail to overlap.
pub fn pathology_bound(m: f64, delta: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::config("pathology_bound: m must be > 0"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config("pathology_bound: delta must lie in (0, 1)"));
    }
    Ok((1.0 - delta).ln() / (-(-m * m / 2.0).exp()).ln_1p())
}

/// How the logistic model is fitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathologyLearner {
    /// Newton's method to the penalized likelihood optimum (`weight_decay` is the L2 penalty).
    Newton,
    /// The minibatch schedule of `classifier`.
    Minibatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathologyConfig {
    pub learner: PathologyLearner,
    pub classifier: ClassifierConfig,
    pub arch: FlowArch,
    pub flow: FlowTrainConfig,
    /// Evaluation grid is `grid_points` evenly spaced on `[-m - pad, m + pad]`.
    pub grid_points: usize,
    pub grid_pad: f64,
}

impl Default for PathologyConfig {
    fn default() -> Self {
        Self {
            learner: PathologyLearner::Newton,
            classifier: ClassifierConfig {
                learning_rate: 1e-2,
                epochs: 200,
                weight_decay: 0.0,
                validation_fraction: 0.0,
                early_stop_patience: 0,
                ..ClassifierConfig::logistic()
            },
            arch: FlowArch::default(),
            flow: FlowTrainConfig {
                learning_rate: 1e-3,
                ..FlowTrainConfig::default()
            },
            grid_points: 201,
            grid_pad: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathologyRun {
    pub seed: u64,
    pub raw_slope: f64,
    pub featurized_slope: f64,
    pub raw_mse: f64,
    pub featurized_mse: f64,
    /// `log r̂` on [`PathologyReport::grid`].
    pub raw_log_ratio: Vec<f64>,
    pub featurized_log_ratio: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathologyReport {
    pub m: f64,
    pub n: usize,
    /// `2m`.
    pub true_slope: f64,
    pub grid: Vec<f64>,
    pub runs: Vec<PathologyRun>,
}

impl PathologyReport {
    pub fn featurized_wins(&self) -> usize {
        self.runs.iter().filter(|r| r.featurized_mse < r.raw_mse).count()
    }
}

fn fit_log_ratio(dp: &DataMatrix, dq: &DataMatrix, grid: &DataMatrix, cfg: &PathologyConfig, seed: u64) -> Result<Vec<f64>> {
    match cfg.learner {
        PathologyLearner::Newton => {
            let (x, y) = pooled(dp, dq)?;
            let m = fit_weighted_logistic(&x, &y, &vec![1.0; y.len()], cfg.classifier.weight_decay)?;
            let prior = (dq.rows() as f64 / dp.rows() as f64).ln();
            Ok(grid.iter_rows().map(|r| m.logit(r) + prior).collect())
        }
        PathologyLearner::Minibatch => {
            let ccfg = ClassifierConfig {
                seed,
                ..cfg.classifier.clone()
            };
            fit_classifier(dp, dq, &ccfg)?.0.log_ratio(grid)
        }
    }
}

fn slope(grid: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (stats::mean(grid), stats::mean(y));
    let sxy: f64 = grid.iter().zip(y).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = grid.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Fit logistic regression between `N(m, 1)` and `N(-m, 1)` (`n` rows each)
/// in raw space and on flow encodings, and compare `log r̂` with `2mx` on a grid.
pub fn pathology_demo(m: f64, n: usize, seeds: &[u64], cfg: &PathologyConfig) -> Result<PathologyReport> {
    if !(m > 0.0) {
        return Err(Error::config("pathology_demo: m must be > 0"));
    }
    if cfg.grid_points < 2 {
        return Err(Error::config("pathology_demo: grid_points must be >= 2"));
    }
    let lim = m + cfg.grid_pad;
    let grid: Vec<f64> = (0..cfg.grid_points)
        .map(|i| -lim + 2.0 * lim * i as f64 / (cfg.grid_points - 1) as f64)
        .collect();
    let gm = DataMatrix::from_column(&grid)?;
    let truth: Vec<f64> = grid.iter().map(|x| 2.0 * m * x).collect();
    let runs = par::map_slice(seeds, |&seed| -> Result<PathologyRun> {
        let spec = GaussianPairSpec {
            mean_p: vec![m],
            mean_q: vec![-m],
            dim: 1,
            n_per_side: n,
            seed,
        };
        let (dp, dq) = gen_gaussian_pair(&spec)?;
        let raw = fit_log_ratio(&dp, &dq, &gm, cfg, seed)?;
        let mut flow = FlowModel::new(1, &cfg.arch, seed)?;
        let fcfg = FlowTrainConfig {
            seed,
            ..cfg.flow.clone()
        };
        flow.fit(&dp.concat(&dq)?, &fcfg)?;
        let feat = fit_log_ratio(&flow.encode(&dp)?, &flow.encode(&dq)?, &flow.encode(&gm)?, cfg, seed)?;
        Ok(PathologyRun {
            seed,
            raw_slope: slope(&grid, &raw),
            featurized_slope: slope(&grid, &feat),
            raw_mse: stats::mse(&raw, &truth),
            featurized_mse: stats::mse(&feat, &truth),
            raw_log_ratio: raw,
            featurized_log_ratio: feat,
        })
    });
    Ok(PathologyReport {
        m,
        n,
        true_slope: 2.0 * m,
        grid,
        runs: runs.into_iter().collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_values() {
        let direct = (0.01f64).ln() / (1.0 - (-2.0f64).exp()).ln();
        let b = pathology_bound(2.0, 0.99).unwrap();
        assert!((b - direct).abs() < 1e-12 && (b - 31.67).abs() < 0.01, "{b}");
        assert!(pathology_bound(3.0, 0.99).unwrap() > b);
        assert!(pathology_bound(2.0, 1e-12).unwrap() < 1e-9);
        assert!(pathology_bound(0.0, 0.5).is_err());
        assert!(pathology_bound(1.0, 1.0).is_err());
    }

    #[test]
    fn true_log_ratio_vanishes_at_origin() {
        for m in [0.25, 1.0, 5.0] {
            let spec = GaussianPairSpec {
                mean_p: vec![m],
                mean_q: vec![-m],
                dim: 1,
                n_per_side: 2,
                seed: 0,
            };
            let r = spec.true_log_ratio(&DataMatrix::from_column(&[0.0, 1.0]).unwrap());
            assert!(r[0].abs() < 1e-12);
            assert!((r[1] - 2.0 * m).abs() < 1e-12);
        }
    }
}
