use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kernel::{GaussianKernel, KernelConfig};
use super::{check_pair, RatioEstimator, RatioModel};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::par;

const JITTER: f64 = 1e-8;
const MAX_ITERS: usize = 20_000;
const TOL: f64 = 1e-10;
const POLISH_EVERY: usize = 25;

/// Solver diagnostics for a KMM fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KmmSolution {
    pub bandwidth: f64,
    pub epsilon: f64,
    pub bound: f64,
    /// Objective after every accepted step; index 0 is the starting point.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl KmmSolution {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap()
    }
}

struct Qp {
    k: Vec<f64>,
    kappa: Vec<f64>,
    n: usize,
    lo: f64,
    hi: f64,
    bound: f64,
}

impl Qp {
    fn kv(&self, v: &[f64]) -> Vec<f64> {
        par::map_range(self.n, |i| self.k[i * self.n..(i + 1) * self.n].iter().zip(v).map(|(a, b)| a * b).sum())
    }

    fn value(&self, beta: &[f64]) -> f64 {
        let kb = self.kv(beta);
        beta.iter().zip(&kb).zip(&self.kappa).map(|((b, kb), c)| 0.5 * b * kb - c * b).sum()
    }

    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        self.kv(beta).iter().zip(&self.kappa).map(|(kb, c)| kb - c).collect()
    }

    fn clamped_sum(&self, y: &[f64], shift: f64) -> f64 {
        y.iter().map(|v| (v - shift).clamp(0.0, self.bound)).sum()
    }

    /// Euclidean projection onto `[0, B]^n` intersected with `lo <= sum <= hi`.
    fn project(&self, y: &[f64]) -> Vec<f64> {
        let s0 = self.clamped_sum(y, 0.0);
        let target = if s0 > self.hi {
            self.hi
        } else if s0 < self.lo {
            self.lo
        } else {
            return y.iter().map(|v| v.clamp(0.0, self.bound)).collect();
        };
        // sum is non-increasing in the shift
        let (mut a, mut b) = if s0 > self.hi {
            (0.0, y.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        } else {
            (y.iter().copied().fold(f64::INFINITY, f64::min) - self.bound, 0.0)
        };
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if self.clamped_sum(y, mid) > target {
                a = mid;
            } else {
                b = mid;
            }
        }
        let feasible = |s: f64| s >= self.lo && s <= self.hi;
        let shift = if feasible(self.clamped_sum(y, a)) { a } else { b };
        y.iter().map(|v| (v - shift).clamp(0.0, self.bound)).collect()
    }

    fn quad(&self, d: &[f64]) -> f64 {
        d.iter().zip(self.kv(d)).map(|(a, b)| a * b).sum()
    }

    /// Exact minimizer on the current face (free coordinates strictly inside
    /// the box, band held at equality if it is active), followed by the
    /// longest feasible step toward it. `None` if no progress is possible.
    fn polish(&self, beta: &[f64], g: &[f64]) -> Option<Vec<f64>> {
        let edge = 1e-12 * self.bound.min(1.0);
        let free: Vec<usize> = (0..self.n).filter(|&i| beta[i] > edge && beta[i] < self.bound - edge).collect();
        if free.is_empty() {
            return None;
        }
        let sum: f64 = beta.iter().sum();
        let band = if (sum - self.lo).abs() <= 1e-9 * self.hi {
            Some(self.lo)
        } else if (sum - self.hi).abs() <= 1e-9 * self.hi {
            Some(self.hi)
        } else {
            None
        };
        let m = free.len();
        let kff = DMatrix::from_fn(m, m, |a, b| self.k[free[a] * self.n + free[b]]);
        let chol = kff.cholesky()?;
        // Newton step on the face: d_F = -K_FF^{-1} (g_F + lambda 1)
        let gf = DVector::from_iterator(m, free.iter().map(|&i| g[i]));
        let x1 = chol.solve(&gf);
        let mut df = -x1;
        if band.is_some() {
            let x2 = chol.solve(&DVector::from_element(m, 1.0));
            let lambda = -df.sum() / x2.sum();
            df += x2 * lambda;
        }
        let mut d = vec![0.0; self.n];
        for (a, &i) in free.iter().enumerate() {
            d[i] = df[a];
        }
        let slope: f64 = g.iter().zip(&d).map(|(g, d)| g * d).sum();
        if !(slope < 0.0) {
            return None;
        }
        let mut t_max: f64 = 1.0;
        for &i in &free {
            if d[i] < 0.0 {
                t_max = t_max.min(-beta[i] / d[i]);
            } else if d[i] > 0.0 {
                t_max = t_max.min((self.bound - beta[i]) / d[i]);
            }
        }
        let ds: f64 = d.iter().sum();
        if band.is_none() && ds != 0.0 {
            let room = if ds > 0.0 { self.hi - sum } else { self.lo - sum };
            t_max = t_max.min(room / ds);
        }
        let t = (-slope / self.quad(&d)).clamp(0.0, t_max.max(0.0));
        if t <= 0.0 {
            return None;
        }
        let cand: Vec<f64> = beta.iter().zip(&d).map(|(b, d)| b + t * d).collect();
        // guard against rounding past the constraints
        Some(self.project(&cand))
    }

    fn max_eigenvalue(&self) -> f64 {
        let mut v = vec![1.0 / (self.n as f64).sqrt(); self.n];
        let mut lambda = 0.0;
        for _ in 0..50 {
            let kv = self.kv(&v);
            let norm = kv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            lambda = norm;
            v = kv.into_iter().map(|x| x / norm).collect();
        }
        lambda.max(JITTER)
    }
}

/// `0.5 beta^T K beta - kappa^T beta` with the solver's kernel, jitter and
/// `kappa_i = (n_s / n_t) sum_j k(s_i, t_j)`.
pub fn kmm_objective(source: &DataMatrix, target: &DataMatrix, bandwidth: f64, beta: &[f64]) -> Result<f64> {
    let kernel = GaussianKernel { bandwidth };
    Ok(build(source, target, &kernel, f64::INFINITY, 0.0, 0.0)?.value(beta))
}

fn build(source: &DataMatrix, target: &DataMatrix, kernel: &GaussianKernel, bound: f64, lo: f64, hi: f64) -> Result<Qp> {
    check_pair(source, target)?;
    let n = source.rows();
    let mut k = kernel.matrix(source, source);
    for i in 0..n {
        k[i * n + i] += JITTER;
    }
    let scale = n as f64 / target.rows() as f64;
    let kappa = par::map_range(n, |i| {
        let s = source.row(i);
        scale * target.iter_rows().map(|t| kernel.eval(s, t)).sum::<f64>()
    });
    Ok(Qp {
        k,
        kappa,
        n,
        lo,
        hi,
        bound,
    })
}

/// Kernel mean matching: source importance weights `beta` solving the box
/// and sum-band constrained QP by projected gradient descent with
/// Barzilai-Borwein trial steps and Armijo backtracking, periodically
/// polished by an exact solve on the current active face.
pub fn fit_kmm(source: &DataMatrix, target: &DataMatrix, kcfg: &KernelConfig) -> Result<(RatioEstimator, KmmSolution)> {
    kcfg.validate()?;
    check_pair(source, target)?;
    let n = source.rows();
    let nf = n as f64;
    let epsilon = kcfg.epsilon.unwrap_or((nf.sqrt() - 1.0) / nf.sqrt());
    let (lo, hi) = ((nf * (1.0 - epsilon)).max(0.0), nf * (1.0 + epsilon));
    if lo > nf * kcfg.b {
        return Err(Error::config(format!(
            "KMM constraints are infeasible: B={} cannot reach sum {lo}",
            kcfg.b
        )));
    }
    let bandwidth = kcfg.resolve_bandwidth(&[source, target]);
    let qp = build(source, target, &GaussianKernel { bandwidth }, kcfg.b, lo, hi)?;

    let mut beta = qp.project(&vec![1.0; n]);
    let mut f = qp.value(&beta);
    let mut trace = vec![f];
    let lipschitz = qp.max_eigenvalue();
    let step_min = 1e-3 / lipschitz;
    let step_max = 1e6 * step_min;
    let mut step = 1e3 * step_min;
    let mut g = qp.gradient(&beta);
    let mut converged = false;

    for it in 0..MAX_ITERS {
        if it % POLISH_EVERY == POLISH_EVERY - 1 {
            // each blocked step pins one more coordinate to the box
            for _ in 0..POLISH_EVERY {
                let Some(cand) = qp.polish(&beta, &g) else { break };
                let fc = qp.value(&cand);
                if !(fc < f) {
                    break;
                }
                beta = cand;
                f = fc;
                g = qp.gradient(&beta);
                trace.push(f);
            }
        }
        let y: Vec<f64> = beta.iter().zip(&g).map(|(b, g)| b - g / lipschitz).collect();
        let stationarity = qp.project(&y).iter().zip(&beta).map(|(c, b)| (c - b).abs()).fold(0.0, f64::max);
        if stationarity <= TOL * lipschitz.max(1.0) {
            converged = true;
            break;
        }
        let y: Vec<f64> = beta.iter().zip(&g).map(|(b, g)| b - step * g).collect();
        let d: Vec<f64> = qp.project(&y).iter().zip(&beta).map(|(c, b)| c - b).collect();
        let slope: f64 = g.iter().zip(&d).map(|(g, d)| g * d).sum();
        if slope >= 0.0 {
            converged = true;
            break;
        }
        // Armijo backtracking along the projected direction
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let cand: Vec<f64> = beta.iter().zip(&d).map(|(b, d)| b + t * d).collect();
            let fc = qp.value(&cand);
            if fc <= f + 1e-4 * t * slope {
                next = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = next else {
            converged = true;
            break;
        };
        let s: Vec<f64> = cand.iter().zip(&beta).map(|(c, b)| c - b).collect();
        let g_new = qp.gradient(&cand);
        let sy: f64 = s.iter().zip(g_new.iter().zip(&g)).map(|(s, (a, b))| s * (a - b)).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        // Barzilai-Borwein trial step for the next iteration
        step = if sy > 0.0 { (ss / sy).clamp(step_min, step_max) } else { step_max };
        beta = cand;
        f = fc;
        g = g_new;
        trace.push(f);
    }
    if !f.is_finite() {
        return Err(Error::numeric("kmm", "objective is not finite"));
    }
    let est = RatioEstimator::new(
        RatioModel::KmmTransductive {
            source: source.clone(),
            beta,
            bound: kcfg.b,
            converged,
        },
        0.0,
    );
    Ok((
        est,
        KmmSolution {
            bandwidth,
            epsilon,
            bound: kcfg.b,
            objective_trace: trace,
            converged,
        },
    ))
}
