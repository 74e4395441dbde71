use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::par;
use crate::rng;
use crate::stats;

/// Settings shared by the kernel estimators.
///
/// `bandwidth = None` selects the median heuristic; `epsilon = None` selects
/// `(sqrt(n_s) - 1) / sqrt(n_s)` for the KMM sum band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub bandwidth: Option<f64>,
    #[serde(rename = "B")]
    pub b: f64,
    pub epsilon: Option<f64>,
    /// Drives KLIEP center selection and the median-heuristic subsample.
    pub seed: u64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            b: 1000.0,
            epsilon: None,
            seed: 0,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.bandwidth {
            if !(s > 0.0) {
                return Err(Error::config(format!("kernel bandwidth must be > 0, got {s}")));
            }
        }
        if !(self.b > 0.0) {
            return Err(Error::config(format!("KMM bound B must be > 0, got {}", self.b)));
        }
        if let Some(e) = self.epsilon {
            if !(e >= 0.0) {
                return Err(Error::config(format!("KMM epsilon must be >= 0, got {e}")));
            }
        }
        Ok(())
    }

    pub(crate) fn resolve_bandwidth(&self, sets: &[&DataMatrix]) -> f64 {
        self.bandwidth.unwrap_or_else(|| median_heuristic(sets, self.seed))
    }
}

/// `k(x, y) = exp(-|x - y|^2 / (2 sigma^2))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    pub bandwidth: f64,
}

impl GaussianKernel {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (-sq_dist(x, y) / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    /// Row-major `a.rows() × b.rows()` Gram matrix.
    pub fn matrix(&self, a: &DataMatrix, b: &DataMatrix) -> Vec<f64> {
        par::map_range(a.rows(), |i| {
            let x = a.row(i);
            b.iter_rows().map(|y| self.eval(x, y)).collect::<Vec<f64>>()
        })
        .concat()
    }
}

pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

const MEDIAN_SUBSAMPLE: usize = 1000;

/// Median pairwise Euclidean distance of the pooled rows (at most 1000 rows,
/// subsampled by `seed`).
pub fn median_heuristic(sets: &[&DataMatrix], seed: u64) -> f64 {
    let rows: Vec<&[f64]> = sets.iter().flat_map(|m| m.iter_rows()).collect();
    let picked: Vec<&[f64]> = if rows.len() > MEDIAN_SUBSAMPLE {
        let mut r = rng::stream(seed, rng::TAG_CENTERS);
        let mut idx = index::sample(&mut r, rows.len(), MEDIAN_SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| rows[i]).collect()
    } else {
        rows
    };
    let dists: Vec<f64> = par::map_range(picked.len(), |i| {
        (i + 1..picked.len()).map(|j| sq_dist(picked[i], picked[j]).sqrt()).collect::<Vec<f64>>()
    })
    .concat();
    let m = if dists.is_empty() { 1.0 } else { stats::median(&dists) };
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_convention() {
        let k = GaussianKernel { bandwidth: 2.0 };
        assert_eq!(k.eval(&[1.0, 1.0], &[1.0, 1.0]), 1.0);
        assert!((k.eval(&[0.0], &[2.0]) - (-0.5f64).exp()).abs() < 1e-15);
        let a = DataMatrix::from_column(&[0.0, 1.0]).unwrap();
        let b = DataMatrix::from_column(&[0.0, 2.0, 3.0]).unwrap();
        let m = k.matrix(&a, &b);
        assert_eq!(m.len(), 6);
        assert!((m[4] - k.eval(&[1.0], &[2.0])).abs() < 1e-15);
    }

    #[test]
    fn median_of_three_points() {
        let a = DataMatrix::from_column(&[0.0, 1.0, 3.0]).unwrap();
        // distances 1, 3, 2
        assert_eq!(median_heuristic(&[&a], 0), 2.0);
        let c = DataMatrix::from_column(&[5.0, 5.0]).unwrap();
        assert_eq!(median_heuristic(&[&c], 0), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(KernelConfig::default().validate().is_ok());
        let bad = KernelConfig {
            bandwidth: Some(0.0),
            ..KernelConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
