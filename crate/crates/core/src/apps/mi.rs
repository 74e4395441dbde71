use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::dre::{DreKind, LogRatio};
use crate::error::{Error, Result};
use crate::featurize::{Recipe, TrainingMode};
use crate::stats;
use crate::train;

/// Fraction of rows held out for the final average.
const TEST_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// Nats.
    pub value: f64,
    /// Held-out joint rows averaged over.
    pub n_joint: usize,
    pub estimator_kind: DreKind,
    pub mode: TrainingMode,
}

/// `E_joint[log r(v)]` with `r = joint / product of marginals`, fitted on
/// the training rows and averaged over held-out joint rows.
///
/// Row `i` of `marginals` is assumed to be built from the same draw as row
/// `i` of `joint`, so both are split with the same indices.
pub fn estimate_mi(joint: &DataMatrix, marginals: &DataMatrix, recipe: &Recipe, seed: u64) -> Result<MiEstimate> {
    if joint.dim() != marginals.dim() {
        return Err(Error::Dimension {
            expected: joint.dim(),
            got: marginals.dim(),
        });
    }
    if joint.rows() != marginals.rows() {
        return Err(Error::config("joint and marginal samples must have the same number of rows"));
    }
    let (fit_rows, test_rows) = train::split(joint.rows(), TEST_FRACTION, seed);
    let est = recipe.fit(&joint.select(&fit_rows)?, &marginals.select(&fit_rows)?)?;
    let held_out = joint.select(&test_rows)?;
    let lr = est.log_ratio(&held_out)?;
    let value = stats::mean(&lr);
    if !value.is_finite() {
        return Err(Error::numeric("estimate_mi", "mean log-ratio is not finite"));
    }
    Ok(MiEstimate {
        value,
        n_joint: held_out.rows(),
        estimator_kind: recipe.dre.kind,
        mode: recipe.mode,
    })
}
