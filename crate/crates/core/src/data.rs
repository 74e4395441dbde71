//! Sample containers, synthetic generators, CSV ingestion and the biased
//! subsampling schemes used to build covariate-shift tasks.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, standard_normal};
use crate::stats;

/// Row-major `rows × dim` table of finite reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::config(format!(
                "data matrix must be non-empty, got {rows}x{dim}"
            )));
        }
        if values.len() != rows * dim {
            return Err(Error::config(format!(
                "expected {} values for a {rows}x{dim} matrix, got {}",
                rows * dim,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(
                format!("data matrix row {}, column {}", pos / dim, pos % dim),
                "non-finite value",
            ));
        }
        Ok(Self { rows, dim, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::config(format!(
                    "row {i} has {} columns, expected {dim}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, values)
    }

    /// Single-column matrix.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.iter_rows().map(|r| r[j]).collect()
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self::new(idx.len(), self.dim, values)
    }

    /// Stack `other` below `self`.
    pub fn concat(&self, other: &DataMatrix) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Self::new(self.rows + other.rows, self.dim, values)
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.iter_rows() {
            for (a, v) in m.iter_mut().zip(r) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= self.rows as f64);
        m
    }

    /// Population covariance matrix, row-major `dim × dim`.
    pub fn covariance(&self) -> Vec<f64> {
        let m = self.column_means();
        let d = self.dim;
        let mut c = vec![0.0; d * d];
        for r in self.iter_rows() {
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] += (r[i] - m[i]) * (r[j] - m[j]);
                }
            }
        }
        c.iter_mut().for_each(|v| *v /= self.rows as f64);
        c
    }

    /// Feed the raw bytes of every value into a SHA-256 digest.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.rows as u64).to_le_bytes());
        h.update((self.dim as u64).to_le_bytes());
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub(crate) fn from_parts_unchecked(rows: usize, dim: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), rows * dim);
        Self { rows, dim, values }
    }
}

/// Features with integer labels. `labels` is empty when no label column was read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledData {
    pub features: DataMatrix,
    pub labels: Vec<i64>,
}

impl LabeledData {
    pub fn new(features: DataMatrix, labels: Vec<i64>) -> Result<Self> {
        if !labels.is_empty() && labels.len() != features.rows() {
            return Err(Error::config(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let labels = if self.labels.is_empty() {
            Vec::new()
        } else {
            idx.iter().map(|&i| self.labels[i]).collect()
        };
        Self::new(self.features.select(idx)?, labels)
    }

    pub fn is_binary(&self) -> bool {
        !self.labels.is_empty() && self.labels.iter().all(|&y| y == 0 || y == 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPairSpec {
    pub mean_p: Vec<f64>,
    pub mean_q: Vec<f64>,
    pub dim: usize,
    pub n_per_side: usize,
    pub seed: u64,
}

impl GaussianPairSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("gaussian pair: dim must be >= 1"));
        }
        if self.mean_p.len() != self.dim || self.mean_q.len() != self.dim {
            return Err(Error::config(format!(
                "gaussian pair: means must have length dim={}",
                self.dim
            )));
        }
        if self.n_per_side < 2 {
            return Err(Error::config("gaussian pair: n_per_side must be >= 2"));
        }
        Ok(())
    }

    pub fn log_p(&self, x: &[f64]) -> f64 {
        stats::isotropic_normal_log_pdf(x, &self.mean_p)
    }

    pub fn log_q(&self, x: &[f64]) -> f64 {
        stats::isotropic_normal_log_pdf(x, &self.mean_q)
    }

    /// Analytic `log p(x) - log q(x)` per row.
    pub fn true_log_ratio(&self, x: &DataMatrix) -> Vec<f64> {
        x.iter_rows().map(|r| self.log_p(r) - self.log_q(r)).collect()
    }
}

/// Draw `n` rows from `N(mean, I)`.
pub(crate) fn sample_isotropic(rng: &mut rng::Rng, mean: &[f64], n: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(n * mean.len());
    for _ in 0..n {
        for m in mean {
            v.push(m + standard_normal(rng));
        }
    }
    v
}

/// Two samples from `N(mean_p, I)` and `N(mean_q, I)`.
pub fn gen_gaussian_pair(spec: &GaussianPairSpec) -> Result<(DataMatrix, DataMatrix)> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let p = sample_isotropic(&mut rng, &spec.mean_p, spec.n_per_side);
    let q = sample_isotropic(&mut rng, &spec.mean_q, spec.n_per_side);
    Ok((
        DataMatrix::new(spec.n_per_side, spec.dim, p)?,
        DataMatrix::new(spec.n_per_side, spec.dim, q)?,
    ))
}

/// Covariate-shift task on two 2-D components: `N(0, I)` labelled 1 and
/// `N([3,3], I)` labelled 0.
///
/// The source holds `round(n * weight_source)` points of the first component
/// and the rest from the second; the target swaps the proportions. Rows are
/// shuffled.
pub fn gen_mixture_da(n: usize, weight_source: f64, seed: u64) -> Result<(LabeledData, LabeledData)> {
    if !(weight_source > 0.0 && weight_source < 1.0) {
        return Err(Error::config("weight_source must lie in (0, 1)"));
    }
    if n == 0 {
        return Err(Error::config("n must be >= 1"));
    }
    let mut rng = rng::seeded(seed);
    let n_pos = (n as f64 * weight_source).round() as usize;
    let source = mixture_side(&mut rng, n, n_pos)?;
    let target = mixture_side(&mut rng, n, n - n_pos)?;
    Ok((source, target))
}

fn mixture_side(rng: &mut rng::Rng, n: usize, n_pos: usize) -> Result<LabeledData> {
    let mut rows: Vec<(Vec<f64>, i64)> = Vec::with_capacity(n);
    for i in 0..n {
        let (mean, y) = if i < n_pos { ([0.0, 0.0], 1) } else { ([3.0, 3.0], 0) };
        rows.push((sample_isotropic(rng, &mean, 1), y));
    }
    rows.shuffle(rng);
    let labels = rows.iter().map(|r| r.1).collect();
    let values = rows.into_iter().flat_map(|r| r.0).collect();
    LabeledData::new(DataMatrix::new(n, 2, values)?, labels)
}

/// Paired samples of two `dim`-dimensional standard Gaussians whose matching
/// coordinates have correlation `rho`.
///
/// Returns `(joint, marginals)`, both `n × 2·dim`. Joint rows are `(x_p, x_q)`;
/// marginal rows pair each `x_p` with an independently permuted `x_q` from the
/// same draw.
pub fn gen_correlated_gaussians(dim: usize, rho: f64, n: usize, seed: u64) -> Result<(DataMatrix, DataMatrix)> {
    if dim == 0 {
        return Err(Error::config("dim must be >= 1"));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::config(format!("|rho| must be < 1, got {rho}")));
    }
    if n < 2 {
        return Err(Error::config("n must be >= 2"));
    }
    let mut rng = rng::seeded(seed);
    let noise = (1.0 - rho * rho).sqrt();
    let mut xp = Vec::with_capacity(n * dim);
    let mut xq = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for _ in 0..dim {
            let a = standard_normal(&mut rng);
            let e = standard_normal(&mut rng);
            xp.push(a);
            xq.push(rho * a + noise * e);
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let width = 2 * dim;
    let mut joint = Vec::with_capacity(n * width);
    let mut marg = Vec::with_capacity(n * width);
    for i in 0..n {
        joint.extend_from_slice(&xp[i * dim..(i + 1) * dim]);
        joint.extend_from_slice(&xq[i * dim..(i + 1) * dim]);
        marg.extend_from_slice(&xp[i * dim..(i + 1) * dim]);
        let j = perm[i];
        marg.extend_from_slice(&xq[j * dim..(j + 1) * dim]);
    }
    Ok((DataMatrix::new(n, width, joint)?, DataMatrix::new(n, width, marg)?))
}

/// Analytic mutual information of [`gen_correlated_gaussians`]: `-(dim/2) ln(1 - rho²)`.
pub fn correlated_gaussian_mi(dim: usize, rho: f64) -> f64 {
    -(dim as f64) / 2.0 * (1.0 - rho * rho).ln()
}

/// Read a headed, comma-separated file of reals.
///
/// Every column except `label_column` becomes a feature. Label cells must be
/// integers (a trailing `.0` is accepted). Row numbers in errors are 1-based
/// data rows, not counting the header.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<LabeledData> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Ingestion {
                path: path.to_path_buf(),
                row: 0,
                column: String::new(),
                message: e.to_string(),
            },
            _ => Error::Csv(e),
        })?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let label_idx = match label_column {
        Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| Error::Ingestion {
            path: path.to_path_buf(),
            row: 0,
            column: name.to_owned(),
            message: "label column not found in header".into(),
        })?),
        None => None,
    };
    let dim = headers.len() - usize::from(label_idx.is_some());
    if dim == 0 {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            row: 0,
            column: String::new(),
            message: "no feature columns".into(),
        });
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Ingestion {
                path: path.to_path_buf(),
                row,
                column: String::new(),
                message: format!("expected {} cells, found {}", headers.len(), record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let bad = |message: String| Error::Ingestion {
                path: path.to_path_buf(),
                row,
                column: headers[j].clone(),
                message,
            };
            if Some(j) == label_idx {
                labels.push(parse_label(cell).ok_or_else(|| bad(format!("non-integer label {cell:?}")))?);
            } else {
                let v: f64 = cell.parse().map_err(|_| bad(format!("non-numeric cell {cell:?}")))?;
                if !v.is_finite() {
                    return Err(bad(format!("non-finite cell {cell:?}")));
                }
                values.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            row: 0,
            column: String::new(),
            message: "file has no data rows".into(),
        });
    }
    LabeledData::new(DataMatrix::new(rows, dim, values)?, labels)
}

fn parse_label(cell: &str) -> Option<i64> {
    if let Ok(v) = cell.parse::<i64>() {
        return Some(v);
    }
    let f: f64 = cell.parse().ok()?;
    (f.fract() == 0.0 && f.is_finite()).then_some(f as i64)
}

/// Per-feature affine record produced by [`standardize`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn apply(&self, data: &DataMatrix) -> Result<DataMatrix> {
        self.check(data)?;
        let d = data.dim();
        let values = data
            .values()
            .iter()
            .enumerate()
            .map(|(k, v)| (v - self.mean[k % d]) / self.scale[k % d])
            .collect();
        DataMatrix::new(data.rows(), d, values)
    }

    pub fn invert(&self, data: &DataMatrix) -> Result<DataMatrix> {
        self.check(data)?;
        let d = data.dim();
        let values = data
            .values()
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.scale[k % d] + self.mean[k % d])
            .collect();
        DataMatrix::new(data.rows(), d, values)
    }

    fn check(&self, data: &DataMatrix) -> Result<()> {
        if data.dim() != self.mean.len() {
            return Err(Error::Dimension {
                expected: self.mean.len(),
                got: data.dim(),
            });
        }
        Ok(())
    }
}

/// Center each column and divide by its population standard deviation.
///
/// Constant columns are left untouched (mean recorded as 0, scale as 1).
pub fn standardize(data: &DataMatrix) -> Result<(DataMatrix, Standardizer)> {
    let mut mean = data.column_means();
    let cov = data.covariance();
    let d = data.dim();
    let mut scale = vec![1.0; d];
    for j in 0..d {
        let sd = cov[j * d + j].sqrt();
        if sd <= 1e-12 * mean[j].abs().max(1.0) {
            mean[j] = 0.0;
        } else {
            scale[j] = sd;
        }
    }
    let s = Standardizer { mean, scale };
    Ok((s.apply(data)?, s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasScheme {
    LabelBias,
    DistanceBias,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub scheme: BiasScheme,
    #[serde(default = "one")]
    pub keep_prob_pos: f64,
    #[serde(default = "one")]
    pub keep_prob_neg: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn one() -> f64 {
    1.0
}

fn default_sigma() -> f64 {
    1.0 / 20.0
}

impl BiasSpec {
    pub fn label_bias(keep_prob_pos: f64, keep_prob_neg: f64) -> Self {
        Self {
            scheme: BiasScheme::LabelBias,
            keep_prob_pos,
            keep_prob_neg,
            sigma: default_sigma(),
        }
    }

    pub fn distance_bias(sigma: f64) -> Self {
        Self {
            scheme: BiasScheme::DistanceBias,
            keep_prob_pos: 1.0,
            keep_prob_neg: 1.0,
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("keep_prob_pos", self.keep_prob_pos), ("keep_prob_neg", self.keep_prob_neg)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1], got {p}")));
            }
        }
        if !(self.sigma > 0.0) {
            return Err(Error::config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

const MAX_SUBSAMPLE_ATTEMPTS: u64 = 100;

/// Indices of rows kept by the biased selection process, in input order.
pub fn biased_subsample_indices(data: &LabeledData, spec: &BiasSpec, seed: u64) -> Result<Vec<usize>> {
    spec.validate()?;
    let keep = keep_probabilities(data, spec)?;
    for attempt in 0..MAX_SUBSAMPLE_ATTEMPTS {
        let mut rng = rng::seeded(if attempt == 0 { seed } else { rng::derive_seed(seed, attempt) });
        let idx: Vec<usize> = keep
            .iter()
            .enumerate()
            .filter_map(|(i, &p)| (rng.random::<f64>() < p).then_some(i))
            .collect();
        if !idx.is_empty() {
            return Ok(idx);
        }
    }
    Err(Error::config(format!(
        "biased subsample was empty after {MAX_SUBSAMPLE_ATTEMPTS} attempts"
    )))
}

/// Subset of `data` drawn by label- or distance-biased selection.
pub fn biased_subsample(data: &LabeledData, spec: &BiasSpec, seed: u64) -> Result<LabeledData> {
    let idx = biased_subsample_indices(data, spec, seed)?;
    data.select(&idx)
}

fn keep_probabilities(data: &LabeledData, spec: &BiasSpec) -> Result<Vec<f64>> {
    match spec.scheme {
        BiasScheme::LabelBias => {
            if !data.is_binary() {
                return Err(Error::config("label-bias subsampling requires binary {0,1} labels"));
            }
            Ok(data
                .labels
                .iter()
                .map(|&y| if y == 1 { spec.keep_prob_pos } else { spec.keep_prob_neg })
                .collect())
        }
        BiasScheme::DistanceBias => {
            let x = &data.features;
            let center = x.column_means();
            let sq: Vec<f64> = x
                .iter_rows()
                .map(|r| r.iter().zip(&center).map(|(a, c)| (a - c) * (a - c)).sum())
                .collect();
            let min = sq.iter().copied().fold(f64::INFINITY, f64::min);
            Ok(sq.iter().map(|s| (-spec.sigma * (s - min)).exp()).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn pair(mean_p: Vec<f64>, mean_q: Vec<f64>, n: usize, seed: u64) -> GaussianPairSpec {
        GaussianPairSpec {
            dim: mean_p.len(),
            mean_p,
            mean_q,
            n_per_side: n,
            seed,
        }
    }

    #[test]
    fn gaussian_pair_means_and_determinism() {
        let spec = pair(vec![0.0, 0.0], vec![3.0, 3.0], 1000, 11);
        let (p, q) = gen_gaussian_pair(&spec).unwrap();
        assert_eq!((p.rows(), p.dim()), (1000, 2));
        for (m, t) in p.column_means().iter().zip([0.0, 0.0]) {
            assert!((m - t).abs() < 0.15);
        }
        for (m, t) in q.column_means().iter().zip([3.0, 3.0]) {
            assert!((m - t).abs() < 0.15);
        }
        let (p2, q2) = gen_gaussian_pair(&spec).unwrap();
        assert_eq!(p, p2);
        assert_eq!(q, q2);
    }

    #[test]
    fn gaussian_pair_same_density() {
        let (p, q) = gen_gaussian_pair(&pair(vec![0.0], vec![0.0], 10, 1)).unwrap();
        assert_eq!(p.rows(), 10);
        assert_ne!(p, q);
    }

    #[test]
    fn gaussian_pair_rejects_bad_dims() {
        let mut s = pair(vec![0.0, 0.0], vec![1.0], 10, 0);
        assert!(gen_gaussian_pair(&s).is_err());
        s.mean_q = vec![1.0, 1.0];
        s.n_per_side = 1;
        assert!(gen_gaussian_pair(&s).is_err());
    }

    #[test]
    fn gaussian_pair_covariance_converges() {
        for dim in 1..=4 {
            let (p, _) = gen_gaussian_pair(&pair(vec![0.0; dim], vec![0.0; dim], 10_000, 3)).unwrap();
            let c = p.covariance();
            let mut frob = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    let t = if i == j { 1.0 } else { 0.0 };
                    frob += (c[i * dim + j] - t).powi(2);
                }
            }
            assert!(frob.sqrt() < 0.1, "dim {dim}: {}", frob.sqrt());
        }
    }

    #[test]
    fn mixture_da_label_counts() {
        let (s, t) = gen_mixture_da(1000, 0.01, 5).unwrap();
        let pos = |d: &LabeledData| d.labels.iter().filter(|&&y| y == 1).count();
        assert_eq!(pos(&s), 10);
        assert_eq!(pos(&t), 990);
        let (s2, _) = gen_mixture_da(1000, 0.01, 5).unwrap();
        assert_eq!(s, s2);
        let (a, b) = gen_mixture_da(100, 0.5, 5).unwrap();
        assert_eq!(pos(&a), pos(&b));
        assert!(gen_mixture_da(10, 1.0, 0).is_err());
    }

    #[test]
    fn correlated_gaussians_correlation() {
        let (joint, marg) = gen_correlated_gaussians(1, 0.9, 10_000, 2).unwrap();
        assert_eq!(joint.dim(), 2);
        assert_eq!(marg.dim(), 2);
        let corr = |m: &DataMatrix| {
            let c = m.covariance();
            c[1] / (c[0] * c[3]).sqrt()
        };
        assert!((corr(&joint) - 0.9).abs() < 0.03);
        assert!(corr(&marg).abs() < 0.05);
        assert!(gen_correlated_gaussians(2, 1.0, 10, 0).is_err());
        assert!((correlated_gaussian_mi(20, 0.9) - 16.6073).abs() < 1e-3);
    }

    #[test]
    fn standardize_analytic_column() {
        let m = DataMatrix::from_column(&[1.0, 2.0, 3.0]).unwrap();
        let (s, rec) = standardize(&m).unwrap();
        let expect = 1.5f64.sqrt();
        assert!((s.values()[0] + expect).abs() < 1e-9);
        assert!(s.values()[1].abs() < 1e-12);
        assert!((s.values()[2] - expect).abs() < 1e-9);
        let back = rec.invert(&s).unwrap();
        for (a, b) in back.values().iter().zip(m.values()) {
            assert!((a - b).abs() < 1e-9);
        }
        let (again, _) = standardize(&s).unwrap();
        for (a, b) in again.values().iter().zip(s.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn standardize_constant_column() {
        let m = DataMatrix::from_rows(&[[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]]).unwrap();
        let (s, rec) = standardize(&m).unwrap();
        assert_eq!(rec.scale[0], 1.0);
        assert_eq!(s.column(0), vec![5.0, 5.0, 5.0]);
    }

    #[test]
    fn csv_parse_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "a,b,y\n1.0,2.0,1\n3.5,-1,0\n0,0,1").unwrap();
        drop(f);
        let d = load_csv(&path, Some("y")).unwrap();
        assert_eq!((d.rows(), d.features.dim()), (3, 2));
        assert_eq!(d.labels, vec![1, 0, 1]);
        assert_eq!(d.features.row(1), &[3.5, -1.0]);

        let d = load_csv(&path, None).unwrap();
        assert!(d.labels.is_empty());
        assert_eq!(d.features.dim(), 3);

        assert!(matches!(load_csv(&path, Some("nope")), Err(Error::Ingestion { .. })));

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "a,b\n1,2\n3,abc\n").unwrap();
        match load_csv(&bad, None) {
            Err(Error::Ingestion { row, column, message, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
                assert!(message.contains("abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(load_csv(dir.path().join("missing.csv"), None).is_err());
    }

    #[test]
    fn label_bias_rates() {
        let n = 1000;
        let labels: Vec<i64> = (0..n).map(|i| (i % 2) as i64).collect();
        let data = LabeledData::new(DataMatrix::from_column(&vec![0.0; n]).unwrap(), labels).unwrap();
        let out = biased_subsample(&data, &BiasSpec::label_bias(0.1, 0.9), 3).unwrap();
        let pos = out.labels.iter().filter(|&&y| y == 1).count() as f64;
        let neg = out.labels.iter().filter(|&&y| y == 0).count() as f64;
        // binomial sd ~ 6.7 and ~ 15
        assert!((pos - 50.0).abs() < 25.0, "{pos}");
        assert!((neg - 450.0).abs() < 50.0, "{neg}");
        let all = biased_subsample(&data, &BiasSpec::label_bias(1.0, 1.0), 3).unwrap();
        assert_eq!(all, data);
    }

    #[test]
    fn label_bias_requires_binary() {
        let data = LabeledData::new(DataMatrix::from_column(&[0.0, 1.0]).unwrap(), vec![2, 4]).unwrap();
        assert!(biased_subsample(&data, &BiasSpec::label_bias(0.5, 0.5), 0).is_err());
    }

    #[test]
    fn distance_bias_concentrates_near_centroid() {
        let mean_dist = |m: &DataMatrix, c: &[f64]| {
            m.iter_rows()
                .map(|r| r.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / m.rows() as f64
        };
        for seed in 0..10 {
            let (x, _) = gen_gaussian_pair(&pair(vec![0.0; 3], vec![0.0; 3], 300, seed)).unwrap();
            let data = LabeledData::new(x, vec![]).unwrap();
            let c = data.features.column_means();
            let out = biased_subsample(&data, &BiasSpec::distance_bias(1.0 / 20.0), seed).unwrap();
            assert!(mean_dist(&out.features, &c) < mean_dist(&data.features, &c));
        }
    }

    proptest::proptest! {
        #[test]
        fn subsample_rows_are_input_rows(seed in 0u64..1000, pp in 0.05f64..1.0, pn in 0.05f64..1.0) {
            let n = 40;
            let vals: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let labels: Vec<i64> = (0..n).map(|i| (i % 3 == 0) as i64).collect();
            let data = LabeledData::new(DataMatrix::from_column(&vals).unwrap(), labels).unwrap();
            let idx = biased_subsample_indices(&data, &BiasSpec::label_bias(pp, pn), seed).unwrap();
            let out = data.select(&idx).unwrap();
            for (k, &i) in idx.iter().enumerate() {
                proptest::prop_assert_eq!(out.features.row(k), data.features.row(i));
                proptest::prop_assert_eq!(out.labels[k], data.labels[i]);
            }
            proptest::prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn standardize_round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 6..30)) {
            let m = DataMatrix::new(vals.len() / 2, 2, vals[..vals.len() / 2 * 2].to_vec()).unwrap();
            let (s, rec) = standardize(&m).unwrap();
            let back = rec.invert(&s).unwrap();
            for (a, b) in back.values().iter().zip(m.values()) {
                proptest::prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
            }
        }
    }
}
