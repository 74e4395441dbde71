use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use super::weights::{flatten, rebalance_mixture, self_normalize};
use crate::data::DataMatrix;
use crate::dre::LogRatio;
use crate::error::{Error, Result};
use crate::flow::{standard_normal_matrix, FlowModel};
use crate::rng;

/// Where the ratio estimator is evaluated on each proposal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioSpace {
    /// On the latent draw `z` (a base estimator fitted on encodings).
    Latent,
    /// On the decoded proposal `x = f^{-1}(z)`.
    Data,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SirConfig {
    pub n_proposals: usize,
    pub n_out: usize,
    /// Flattening exponent; 1 leaves the weights unchanged.
    pub gamma: f64,
    /// Convert `p/q` into weights against the equal mixture the flow was fit to.
    pub rebalance: bool,
    pub space: RatioSpace,
    pub seed: u64,
}

impl Default for SirConfig {
    fn default() -> Self {
        Self {
            n_proposals: 10_000,
            n_out: 1000,
            gamma: 1.0,
            rebalance: true,
            space: RatioSpace::Latent,
            seed: 0,
        }
    }
}

/// Sampling-importance-resampling from a flow toward `p`: proposals
/// `z ~ N(0, I)`, weights from the ratio estimate (rebalanced, flattened,
/// self-normalized), categorical resampling, then decoding.
pub fn sir_sample(flow: &FlowModel, est: &dyn LogRatio, cfg: &SirConfig) -> Result<DataMatrix> {
    if cfg.n_proposals == 0 || cfg.n_out == 0 {
        return Err(Error::config("SIR needs n_proposals >= 1 and n_out >= 1"));
    }
    if !(cfg.gamma >= 0.0) {
        return Err(Error::config("SIR gamma must be >= 0"));
    }
    let z = standard_normal_matrix(cfg.n_proposals, flow.dim, cfg.seed)?;
    let x = flow.inverse(&z)?;
    let log_r = match cfg.space {
        RatioSpace::Latent => est.log_ratio(&z)?,
        RatioSpace::Data => est.log_ratio(&x)?,
    };
    // shift before exponentiating; every later step is scale-free except
    // rebalancing, which needs the absolute ratio
    let mut r: Vec<f64> = if cfg.rebalance {
        rebalance_mixture(&log_r.iter().map(|l| l.exp()).collect::<Vec<_>>())
    } else {
        let m = log_r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        log_r.iter().map(|l| (l - m).exp()).collect()
    };
    r = flatten(&r, cfg.gamma);
    let w = self_normalize(&r)?;
    let dist = WeightedIndex::new(&w.weights).map_err(|e| Error::DegenerateWeights(e.to_string()))?;
    let mut rs = rng::stream(cfg.seed, rng::TAG_RESAMPLE);
    let idx: Vec<usize> = (0..cfg.n_out).map(|_| dist.sample(&mut rs)).collect();
    x.select(&idx)
}
