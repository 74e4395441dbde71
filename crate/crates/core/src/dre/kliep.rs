use rand::seq::index;

use super::kernel::{sq_dist, GaussianKernel, KernelConfig};
use super::{check_pair, RatioEstimator, RatioModel};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::par;
use crate::rng;

pub const KLIEP_MAX_CENTERS: usize = 100;

const TOL: f64 = 1e-10;

/// `log sum_l theta_l k(x, c_l)` evaluated stably.
pub(crate) fn log_expansion(x: &[f64], centers: &DataMatrix, theta: &[f64], bandwidth: f64) -> f64 {
    let s2 = 2.0 * bandwidth * bandwidth;
    let terms: Vec<f64> = centers
        .iter_rows()
        .zip(theta)
        .filter(|(_, t)| **t > 0.0)
        .map(|(c, t)| t.ln() - sq_dist(x, c) / s2)
        .collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn pick_centers(dp: &DataMatrix, seed: u64) -> Result<DataMatrix> {
    if dp.rows() <= KLIEP_MAX_CENTERS {
        return Ok(dp.clone());
    }
    let mut r = rng::stream(seed, rng::TAG_CENTERS);
    let mut idx = index::sample(&mut r, dp.rows(), KLIEP_MAX_CENTERS).into_vec();
    idx.sort_unstable();
    dp.select(&idx)
}

struct Problem {
    /// n_p × b design matrix `k(x_p, c)`.
    a: Vec<f64>,
    /// Column means of `k(x_q, c)`.
    b: Vec<f64>,
    n_p: usize,
    n_c: usize,
}

impl Problem {
    fn fitted(&self, theta: &[f64]) -> Vec<f64> {
        par::map_range(self.n_p, |i| {
            self.a[i * self.n_c..(i + 1) * self.n_c].iter().zip(theta).map(|(a, t)| a * t).sum()
        })
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        self.fitted(theta).iter().map(|v| v.ln()).sum::<f64>() / self.n_p as f64
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let f = self.fitted(theta);
        let mut g = vec![0.0; self.n_c];
        for (i, fi) in f.iter().enumerate() {
            for (gl, a) in g.iter_mut().zip(&self.a[i * self.n_c..(i + 1) * self.n_c]) {
                *gl += a / fi;
            }
        }
        let inv = 1.0 / self.n_p as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        g
    }

    /// Euclidean projection onto `{theta >= 0, b^T theta = 1}`, then an
    /// exact renormalization to remove rounding drift.
    fn project(&self, theta: &mut [f64]) {
        let mass = |shift: f64| -> f64 { self.b.iter().zip(theta.iter()).map(|(b, t)| b * (t - shift * b).max(0.0)).sum() };
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        if mass(0.0) > 1.0 {
            hi = theta.iter().zip(&self.b).filter(|(_, b)| **b > 0.0).map(|(t, b)| t / b).fold(0.0, f64::max);
        } else {
            lo = -1.0;
            while mass(lo) < 1.0 {
                lo *= 2.0;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mass(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let shift = 0.5 * (lo + hi);
        for (t, b) in theta.iter_mut().zip(&self.b) {
            *t = (*t - shift * b).max(0.0);
        }
        let bt: f64 = self.b.iter().zip(theta.iter()).map(|(b, t)| b * t).sum();
        theta.iter_mut().for_each(|t| *t /= bt);
    }

    /// Largest curvature of the negated objective at `theta`, by power iteration.
    fn lipschitz(&self, theta: &[f64]) -> f64 {
        let f = self.fitted(theta);
        let mut v = vec![1.0 / (self.n_c as f64).sqrt(); self.n_c];
        let mut lambda = 0.0;
        for _ in 0..30 {
            let mut hv = vec![0.0; self.n_c];
            for (i, fi) in f.iter().enumerate() {
                let row = &self.a[i * self.n_c..(i + 1) * self.n_c];
                let s: f64 = row.iter().zip(&v).map(|(a, x)| a * x).sum::<f64>() / (fi * fi);
                for (h, a) in hv.iter_mut().zip(row) {
                    *h += s * a;
                }
            }
            hv.iter_mut().for_each(|h| *h /= self.n_p as f64);
            let norm = hv.iter().map(|h| h * h).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            lambda = norm;
            v = hv.into_iter().map(|h| h / norm).collect();
        }
        lambda.max(f64::MIN_POSITIVE)
    }
}

/// KLIEP: maximize mean `log r(x_p)` over non-negative Gaussian expansions
/// centred on (at most 100) `dp` rows, subject to mean `r(x_q) = 1`.
pub fn fit_kliep(dp: &DataMatrix, dq: &DataMatrix, kcfg: &KernelConfig, iters: usize) -> Result<RatioEstimator> {
    kcfg.validate()?;
    check_pair(dp, dq)?;
    let bandwidth = kcfg.resolve_bandwidth(&[dp, dq]);
    let kernel = GaussianKernel { bandwidth };
    let centers = pick_centers(dp, kcfg.seed)?;
    let n_c = centers.rows();
    let a = kernel.matrix(dp, &centers);
    if let Some(i) = (0..dp.rows()).find(|&i| a[i * n_c..(i + 1) * n_c].iter().all(|v| *v == 0.0)) {
        return Err(Error::config(format!(
            "KLIEP kernel row {i} is identically zero; bandwidth {bandwidth} is too small"
        )));
    }
    let kq = kernel.matrix(dq, &centers);
    let mut b = vec![0.0; n_c];
    for row in kq.chunks(n_c) {
        for (bl, k) in b.iter_mut().zip(row) {
            *bl += k;
        }
    }
    b.iter_mut().for_each(|v| *v /= dq.rows() as f64);
    if b.iter().all(|v| *v == 0.0) {
        return Err(Error::config(format!(
            "KLIEP centers have no kernel mass on the q sample at bandwidth {bandwidth}"
        )));
    }

    let prob = Problem { a, b, n_p: dp.rows(), n_c };
    let mut theta = vec![1.0; n_c];
    prob.project(&mut theta);
    let mut obj = prob.objective(&theta);
    let mut step = 0.1 / prob.lipschitz(&theta);

    for _ in 0..iters {
        let g = prob.gradient(&theta);
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand: Vec<f64> = theta.iter().zip(&g).map(|(t, g)| t + step * g).collect();
            prob.project(&mut cand);
            let c_obj = prob.objective(&cand);
            if c_obj.is_finite() && c_obj >= obj {
                let gain = c_obj - obj;
                theta = cand;
                obj = c_obj;
                step *= 1.5;
                accepted = gain > TOL * (1.0 + obj.abs());
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(RatioEstimator::new(
        RatioModel::Kliep {
            centers,
            theta,
            bandwidth,
        },
        0.0,
    ))
}
