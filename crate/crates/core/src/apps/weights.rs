use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-negative importance weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    /// Sums to one.
    pub normalized: bool,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        check(&weights)?;
        Ok(Self {
            weights,
            normalized: false,
        })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
            normalized: false,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn check(w: &[f64]) -> Result<()> {
    if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::DegenerateWeights(format!("weight {i} is {} (must be finite and >= 0)", w[i])));
    }
    Ok(())
}

/// `w_i / sum_j w_j`.
pub fn self_normalize(w: &[f64]) -> Result<WeightVector> {
    check(w)?;
    let max = w.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::DegenerateWeights("all weights are zero".into()));
    }
    // scale first so huge ratios cannot overflow the sum
    let scaled: Vec<f64> = w.iter().map(|v| v / max).collect();
    let total: f64 = scaled.iter().sum();
    Ok(WeightVector {
        weights: scaled.iter().map(|v| v / total).collect(),
        normalized: true,
    })
}

/// Element-wise `w^gamma`; `gamma = 0` gives all ones.
pub fn flatten(w: &[f64], gamma: f64) -> Vec<f64> {
    w.iter().map(|v| if gamma == 0.0 { 1.0 } else { v.powf(gamma) }).collect()
}

/// Weights against the equal mixture of `p` and `q`: `r / ((r + 1) / 2)`.
pub fn rebalance_mixture(r: &[f64]) -> Vec<f64> {
    r.iter()
        .map(|&v| if v.is_infinite() { 2.0 } else { 2.0 * v / (v + 1.0) })
        .collect()
}
