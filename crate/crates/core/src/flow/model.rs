use std::path::Path;

use serde::{Deserialize, Serialize};

use super::made::{BlockCache, MadeBlock};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::nn::Parameters;
use crate::par;
use crate::rng::{self, standard_normal};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Per-feature invertible affine map `y = x * exp(log_scale) + shift`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineNorm {
    pub log_scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl AffineNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            log_scale: vec![0.0; dim],
            shift: vec![0.0; dim],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.log_scale)
            .zip(&self.shift)
            .map(|((x, s), t)| x * s.exp() + t)
            .collect()
    }

    fn inverse(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.log_scale)
            .zip(&self.shift)
            .map(|((y, s), t)| (y - t) * (-s).exp())
            .collect()
    }

    fn logdet(&self) -> f64 {
        self.log_scale.iter().sum()
    }

    /// Set the map so that `batch` comes out with zero mean and unit variance.
    fn fit_to(&mut self, batch: &[Vec<f64>]) {
        let n = batch.len() as f64;
        for j in 0..self.shift.len() {
            let mean = batch.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = batch.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let s = -var.sqrt().max(1e-6).ln();
            self.log_scale[j] = s;
            self.shift[j] = -mean * s.exp();
        }
    }

    fn backward(&self, x: &[f64], gy: &[f64], gld: f64, grad: &mut [f64]) -> Vec<f64> {
        let d = x.len();
        let (gs, gt) = grad.split_at_mut(d);
        let mut gx = vec![0.0; d];
        for j in 0..d {
            let e = self.log_scale[j].exp();
            gx[j] = gy[j] * e;
            gs[j] += gy[j] * x[j] * e + gld;
            gt[j] += gy[j];
        }
        gx
    }
}

impl Parameters for AffineNorm {
    fn n_params(&self) -> usize {
        2 * self.shift.len()
    }

    fn write_params(&self, out: &mut [f64]) {
        let d = self.shift.len();
        out[..d].copy_from_slice(&self.log_scale);
        out[d..].copy_from_slice(&self.shift);
    }

    fn read_params(&mut self, src: &[f64]) {
        let d = self.shift.len();
        self.log_scale.copy_from_slice(&src[..d]);
        self.shift.copy_from_slice(&src[d..]);
    }
}

/// Block layout of a [`FlowModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowArch {
    pub n_blocks: usize,
    pub hidden_sizes: Vec<usize>,
}

impl Default for FlowArch {
    fn default() -> Self {
        Self {
            n_blocks: 5,
            hidden_sizes: vec![100],
        }
    }
}

/// Masked autoregressive flow with a standard normal base density.
///
/// Each layer is a [`MadeBlock`] followed by an [`AffineNorm`]. The first
/// block uses the sequential ordering and each later block reverses the
/// previous one. `forward` maps data to latent space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub dim: usize,
    pub blocks: Vec<MadeBlock>,
    pub norms: Vec<AffineNorm>,
    /// Whether the normalizers have been fitted to a data batch.
    pub norms_initialized: bool,
}

pub(crate) struct FlowCache {
    layers: Vec<BlockCache>,
    pub z: Vec<f64>,
    pub logdet: f64,
}

impl FlowModel {
    pub fn new(dim: usize, arch: &FlowArch, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("flow dim must be >= 1"));
        }
        let mut r = rng::stream(seed, rng::TAG_INIT);
        let mut ordering: Vec<usize> = (0..dim).collect();
        let mut blocks = Vec::with_capacity(arch.n_blocks);
        for _ in 0..arch.n_blocks {
            blocks.push(MadeBlock::new(dim, &arch.hidden_sizes, &ordering, &mut r)?);
            ordering.reverse();
        }
        Ok(Self {
            dim,
            norms: vec![AffineNorm::identity(dim); arch.n_blocks],
            blocks,
            norms_initialized: false,
        })
    }

    /// Zero-block flow; `forward` is the identity.
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            blocks: Vec::new(),
            norms: Vec::new(),
            norms_initialized: true,
        }
    }

    fn check_dim(&self, x: &DataMatrix) -> Result<()> {
        if x.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.dim(),
            });
        }
        Ok(())
    }

    /// Latent code and log|det J| for one row.
    pub fn forward_row(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut h = x.to_vec();
        let mut logdet = 0.0;
        for (k, (block, norm)) in self.blocks.iter().zip(&self.norms).enumerate() {
            let (u, ld) = block.forward_row(&h);
            h = norm.forward(&u);
            logdet += ld + norm.logdet();
            if !logdet.is_finite() || h.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("flow block {k}"), "non-finite forward value"));
            }
        }
        Ok((h, logdet))
    }

    pub fn inverse_row(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut h = z.to_vec();
        for (k, (block, norm)) in self.blocks.iter().zip(&self.norms).enumerate().rev() {
            let u = norm.inverse(&h);
            h = block.inverse_row(&u);
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("flow block {k}"), "non-finite inverse value"));
            }
        }
        Ok(h)
    }

    /// Encode every row; returns latents and per-row log-determinants.
    pub fn forward(&self, x: &DataMatrix) -> Result<(DataMatrix, Vec<f64>)> {
        self.check_dim(x)?;
        let out = par::map_range(x.rows(), |i| self.forward_row(x.row(i)));
        let mut values = Vec::with_capacity(x.values().len());
        let mut logdet = Vec::with_capacity(x.rows());
        for r in out {
            let (z, ld) = r?;
            values.extend(z);
            logdet.push(ld);
        }
        Ok((DataMatrix::from_parts_unchecked(x.rows(), self.dim, values), logdet))
    }

    pub fn inverse(&self, z: &DataMatrix) -> Result<DataMatrix> {
        self.check_dim(z)?;
        let out = par::map_range(z.rows(), |i| self.inverse_row(z.row(i)));
        let mut values = Vec::with_capacity(z.values().len());
        for r in out {
            values.extend(r?);
        }
        Ok(DataMatrix::from_parts_unchecked(z.rows(), self.dim, values))
    }

    /// Encodings only.
    pub fn encode(&self, x: &DataMatrix) -> Result<DataMatrix> {
        Ok(self.forward(x)?.0)
    }

    pub fn log_prob(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        let (z, logdet) = self.forward(x)?;
        Ok(z.iter_rows().zip(logdet).map(|(z, ld)| base_log_prob(z) + ld).collect())
    }

    /// Decode `n` standard-normal draws.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DataMatrix> {
        let z = standard_normal_matrix(n, self.dim, seed)?;
        self.inverse(&z)
    }

    pub(crate) fn forward_cached(&self, x: &[f64]) -> FlowCache {
        let mut h = x.to_vec();
        let mut logdet = 0.0;
        let mut layers = Vec::with_capacity(self.blocks.len());
        for (block, norm) in self.blocks.iter().zip(&self.norms) {
            let (cache, ld) = block.forward_cached(&h);
            let next = norm.forward(&cache.u);
            logdet += ld + norm.logdet();
            layers.push(cache);
            h = next;
        }
        FlowCache { layers, z: h, logdet }
    }

    /// Accumulate parameter gradients given `dL/dz` and `dL/dlogdet`;
    /// returns `dL/dx`.
    pub(crate) fn backward(&self, cache: &FlowCache, gz: &[f64], gld: f64, grad: &mut [f64]) -> Vec<f64> {
        let offsets = self.offsets();
        let mut g = gz.to_vec();
        for k in (0..self.blocks.len()).rev() {
            let bc = &cache.layers[k];
            let (b0, n0, n1) = (offsets[2 * k], offsets[2 * k + 1], offsets[2 * k + 2]);
            let gu = self.norms[k].backward(&bc.u, &g, gld, &mut grad[n0..n1]);
            g = self.blocks[k].backward(bc, &gu, gld, &mut grad[b0..n0]);
        }
        g
    }

    /// Add uniform noise in `[-scale, scale)` to every free parameter,
    /// leaving masked connections at zero. Produces non-trivial invertible
    /// maps for testing.
    pub fn perturbed(mut self, scale: f64, seed: u64) -> Self {
        use rand::Rng as _;
        let mut r = rng::seeded(seed);
        let mut p = self.params();
        p.iter_mut().for_each(|v| *v += r.random_range(-scale..scale));
        self.read_params(&p);
        for b in &mut self.blocks {
            for l in b.hidden.iter_mut().chain([&mut b.mu, &mut b.log_scale]) {
                if let Some(m) = &l.mask {
                    l.w.iter_mut().zip(m).for_each(|(w, m)| *w *= m);
                }
            }
        }
        self
    }

    /// `true` for every flat parameter that is not pinned to zero by a mask.
    pub fn free_parameters(&self) -> Vec<bool> {
        let mut probe = self.clone();
        let ones = vec![1.0; probe.n_params()];
        probe.read_params(&ones);
        for b in &mut probe.blocks {
            for l in b.hidden.iter_mut().chain([&mut b.mu, &mut b.log_scale]) {
                if let Some(m) = &l.mask {
                    l.w.iter_mut().zip(m).for_each(|(w, m)| *w *= m);
                }
            }
        }
        probe.params().iter().map(|v| *v != 0.0).collect()
    }

    /// Fit every normalizer to the batch statistics of its input.
    pub fn initialize_normalizers(&mut self, batch: &DataMatrix) -> Result<()> {
        self.check_dim(batch)?;
        let mut rows: Vec<Vec<f64>> = batch.iter_rows().map(<[f64]>::to_vec).collect();
        for k in 0..self.blocks.len() {
            let us: Vec<Vec<f64>> = rows.iter().map(|r| self.blocks[k].forward_row(r).0).collect();
            self.norms[k].fit_to(&us);
            rows = us.iter().map(|u| self.norms[k].forward(u)).collect();
        }
        self.norms_initialized = true;
        Ok(())
    }

    fn offsets(&self) -> Vec<usize> {
        let mut o = vec![0];
        for (b, n) in self.blocks.iter().zip(&self.norms) {
            let last = *o.last().unwrap();
            o.push(last + b.n_params());
            o.push(last + b.n_params() + n.n_params());
        }
        o
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut m: FlowModel = serde_json::from_str(s)?;
        if m.blocks.len() != m.norms.len() {
            return Err(Error::config("stored flow has mismatched blocks and normalizers"));
        }
        for b in &mut m.blocks {
            if b.dim != m.dim {
                return Err(Error::config("stored flow block has wrong dim"));
            }
            b.restore_masks()?;
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Parameters for FlowModel {
    fn n_params(&self) -> usize {
        self.blocks.iter().map(Parameters::n_params).sum::<usize>()
            + self.norms.iter().map(Parameters::n_params).sum::<usize>()
    }

    fn write_params(&self, out: &mut [f64]) {
        let mut off = 0;
        for (b, n) in self.blocks.iter().zip(&self.norms) {
            let k = b.n_params();
            b.write_params(&mut out[off..off + k]);
            off += k;
            let k = n.n_params();
            n.write_params(&mut out[off..off + k]);
            off += k;
        }
    }

    fn read_params(&mut self, src: &[f64]) {
        let mut off = 0;
        for (b, n) in self.blocks.iter_mut().zip(&mut self.norms) {
            let k = b.n_params();
            b.read_params(&src[off..off + k]);
            off += k;
            let k = n.n_params();
            n.read_params(&src[off..off + k]);
            off += k;
        }
    }
}

/// Standard normal log-density of one row.
pub fn base_log_prob(z: &[f64]) -> f64 {
    -0.5 * (z.len() as f64 * LN_2PI + z.iter().map(|v| v * v).sum::<f64>())
}

pub(crate) fn standard_normal_matrix(n: usize, dim: usize, seed: u64) -> Result<DataMatrix> {
    let mut r = rng::stream(seed, rng::TAG_SAMPLE);
    let values = (0..n * dim).map(|_| standard_normal(&mut r)).collect();
    DataMatrix::new(n, dim, values)
}
