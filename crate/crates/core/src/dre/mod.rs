//! Base density-ratio estimators for `r(x) = p(x) / q(x)`.
//!
//! * probabilistic classification: `log r = logit c(x) + log(n_q / n_p)`
//! * KLIEP: non-negative Gaussian-kernel expansion with unit mean under `q`
//! * KMM: transductive weights on source rows matching kernel mean embeddings

mod classifier;
mod kernel;
mod kliep;
mod kmm;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use classifier::{fit_classifier, ClassifierConfig};
pub use kernel::{median_heuristic, GaussianKernel, KernelConfig};
pub use kliep::{fit_kliep, KLIEP_MAX_CENTERS};
pub use kmm::{fit_kmm, kmm_objective, KmmSolution};

pub(crate) use classifier::{pooled, ClassifierObjective};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Mlp};
use crate::par;

/// Anything that can report `log r(x)` row by row.
pub trait LogRatio {
    fn log_ratio(&self, x: &DataMatrix) -> Result<Vec<f64>>;

    fn ratio(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        Ok(self.log_ratio(x)?.into_iter().map(f64::exp).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DreKind {
    Classifier,
    Kliep,
    Kmm,
}

/// Which base estimator to fit, with the settings of every family so a
/// single config section can switch between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DreConfig {
    pub kind: DreKind,
    pub classifier: ClassifierConfig,
    pub kernel: KernelConfig,
    pub kliep_iters: usize,
}

impl Default for DreConfig {
    fn default() -> Self {
        Self {
            kind: DreKind::Classifier,
            classifier: ClassifierConfig::default(),
            kernel: KernelConfig::default(),
            kliep_iters: 1000,
        }
    }
}

impl DreConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DreKind::Classifier => self.classifier.validate(),
            DreKind::Kliep | DreKind::Kmm => self.kernel.validate(),
        }
    }
}

/// Fit the configured estimator of `p(x) / q(x)`; for KMM `dp` is the
/// target sample and `dq` the source whose rows receive weights.
pub fn fit_ratio(dp: &DataMatrix, dq: &DataMatrix, cfg: &DreConfig) -> Result<RatioEstimator> {
    match cfg.kind {
        DreKind::Classifier => fit_classifier(dp, dq, &cfg.classifier).map(|(e, _)| e),
        DreKind::Kliep => fit_kliep(dp, dq, &cfg.kernel, cfg.kliep_iters),
        DreKind::Kmm => fit_kmm(dq, dp, &cfg.kernel).map(|(e, _)| e),
    }
}

/// Fitted parameters of one estimator family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RatioModel {
    Classifier {
        net: Mlp,
    },
    Kliep {
        centers: DataMatrix,
        theta: Vec<f64>,
        bandwidth: f64,
    },
    KmmTransductive {
        source: DataMatrix,
        beta: Vec<f64>,
        bound: f64,
        converged: bool,
    },
}

/// A fitted ratio estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimator {
    pub model: RatioModel,
    /// Added to the classifier logit; `log(n_q / n_p)`. Zero for kernel kinds.
    pub prior_correction: f64,
    #[serde(skip)]
    source_index: Option<HashMap<Vec<u64>, usize>>,
}

impl RatioEstimator {
    pub fn from_classifier(net: Mlp, n_p: usize, n_q: usize) -> Self {
        Self::new(
            RatioModel::Classifier { net },
            (n_q as f64 / n_p as f64).ln(),
        )
    }

    pub(crate) fn new(model: RatioModel, prior_correction: f64) -> Self {
        let mut e = Self {
            model,
            prior_correction,
            source_index: None,
        };
        e.index_source();
        e
    }

    fn index_source(&mut self) {
        if let RatioModel::KmmTransductive { source, .. } = &self.model {
            let mut map = HashMap::with_capacity(source.rows());
            for (i, r) in source.iter_rows().enumerate() {
                map.entry(row_key(r)).or_insert(i);
            }
            self.source_index = Some(map);
        }
    }

    pub fn kind(&self) -> DreKind {
        match self.model {
            RatioModel::Classifier { .. } => DreKind::Classifier,
            RatioModel::Kliep { .. } => DreKind::Kliep,
            RatioModel::KmmTransductive { .. } => DreKind::Kmm,
        }
    }

    pub fn is_inductive(&self) -> bool {
        !matches!(self.model, RatioModel::KmmTransductive { .. })
    }

    /// Classifier probability `c(x)` that a row came from `p`.
    pub fn probability(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        match &self.model {
            RatioModel::Classifier { net } => {
                check_dim(net.n_in(), x)?;
                Ok(par::map_range(x.rows(), |i| sigmoid(net.forward(x.row(i))[0])))
            }
            _ => Err(Error::Unsupported("probability is defined for classifier estimators only".into())),
        }
    }

    /// Raw classifier logits, without the prior correction.
    pub fn logits(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        match &self.model {
            RatioModel::Classifier { net } => {
                check_dim(net.n_in(), x)?;
                Ok(par::map_range(x.rows(), |i| net.forward(x.row(i))[0]))
            }
            _ => Err(Error::Unsupported("logits are defined for classifier estimators only".into())),
        }
    }

    /// KMM source weights.
    pub fn weights(&self) -> Option<&[f64]> {
        match &self.model {
            RatioModel::KmmTransductive { beta, .. } => Some(beta),
            _ => None,
        }
    }

    /// Write KMM weights as `index,weight` CSV.
    pub fn write_weights_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let beta = self
            .weights()
            .ok_or_else(|| Error::Unsupported("only KMM estimators carry per-sample weights".into()))?;
        write_weights_csv(path, beta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut e: RatioEstimator = serde_json::from_str(s)?;
        e.index_source();
        Ok(e)
    }
}

impl LogRatio for RatioEstimator {
    fn log_ratio(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        match &self.model {
            RatioModel::Classifier { .. } => Ok(self
                .logits(x)?
                .into_iter()
                .map(|l| l + self.prior_correction)
                .collect()),
            RatioModel::Kliep {
                centers,
                theta,
                bandwidth,
            } => {
                check_dim(centers.dim(), x)?;
                Ok(par::map_range(x.rows(), |i| kliep::log_expansion(x.row(i), centers, theta, *bandwidth)))
            }
            RatioModel::KmmTransductive { source, beta, .. } => {
                check_dim(source.dim(), x)?;
                let index = self.source_index.as_ref().expect("KMM estimator is indexed on construction");
                x.iter_rows()
                    .enumerate()
                    .map(|(i, r)| {
                        let j = index.get(&row_key(r)).ok_or_else(|| {
                            Error::Unsupported(format!("row {i} is not one of the KMM source rows"))
                        })?;
                        Ok(beta[*j].max(f64::MIN_POSITIVE).ln())
                    })
                    .collect()
            }
        }
    }
}

impl LogRatio for crate::data::GaussianPairSpec {
    fn log_ratio(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        check_dim(self.dim, x)?;
        Ok(self.true_log_ratio(x))
    }
}

fn row_key(r: &[f64]) -> Vec<u64> {
    r.iter().map(|v| (v + 0.0).to_bits()).collect()
}

fn check_dim(expected: usize, x: &DataMatrix) -> Result<()> {
    if x.dim() != expected {
        return Err(Error::Dimension {
            expected,
            got: x.dim(),
        });
    }
    Ok(())
}

pub(crate) fn check_pair(a: &DataMatrix, b: &DataMatrix) -> Result<()> {
    check_dim(a.dim(), b)
}

/// Write `index,weight` rows.
pub fn write_weights_csv(path: impl AsRef<Path>, weights: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "weight"])?;
    for (i, b) in weights.iter().enumerate() {
        w.write_record([i.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
