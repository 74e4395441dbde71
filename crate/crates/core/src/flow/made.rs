//! Masked autoencoder block producing per-coordinate shift and log-scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dense, MlpCache, Parameters};
use crate::rng::Rng;

/// Bound applied to every log-scale output inside the flow.
pub const LOG_SCALE_CLAMP: f64 = 7.0;

/// One autoregressive block: a masked ReLU network whose two linear heads
/// give the shift `mu(x)` and log-scale `a(x)` of every coordinate.
///
/// Coordinate `i` of either head depends only on coordinates that precede
/// `i` in the block's ordering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MadeBlock {
    pub dim: usize,
    pub hidden_sizes: Vec<usize>,
    /// `ordering[k]` is the coordinate at autoregressive position `k`.
    pub ordering: Vec<usize>,
    pub hidden: Vec<Dense>,
    pub mu: Dense,
    pub log_scale: Dense,
}

/// Intermediate values of one block evaluation.
pub(crate) struct BlockCache {
    pub net: MlpCache,
    pub a_raw: Vec<f64>,
    pub a: Vec<f64>,
    pub u: Vec<f64>,
}

impl MadeBlock {
    /// Build a block with masks derived from `ordering`.
    ///
    /// Hidden weights are Glorot-uniform times mask; both heads start at
    /// zero so the block is the identity map.
    pub fn new(dim: usize, hidden_sizes: &[usize], ordering: &[usize], rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("MADE block needs dim >= 1"));
        }
        if hidden_sizes.contains(&0) {
            return Err(Error::config("MADE hidden sizes must be >= 1"));
        }
        check_permutation(ordering, dim)?;
        let masks = build_masks(dim, hidden_sizes, ordering);
        let mut sizes = vec![dim];
        sizes.extend_from_slice(hidden_sizes);
        let hidden = masks.hidden.into_iter().enumerate()
            .map(|(l, m)| Dense::glorot(sizes[l], sizes[l + 1], Some(m), rng))
            .collect();
        let last = *sizes.last().unwrap();
        let head = |mask: Vec<f64>| {
            let mut d = Dense::zeros(last, dim);
            d.mask = Some(mask);
            d
        };
        Ok(Self {
            dim,
            hidden_sizes: hidden_sizes.to_vec(),
            ordering: ordering.to_vec(),
            hidden,
            mu: head(masks.head.clone()),
            log_scale: head(masks.head),
        })
    }

    /// Autoregressive degree (1-based position) of each input coordinate.
    pub fn input_degrees(&self) -> Vec<usize> {
        input_degrees(&self.ordering)
    }

    /// Re-attach masks after deserialization.
    pub(crate) fn restore_masks(&mut self) -> Result<()> {
        check_permutation(&self.ordering, self.dim)?;
        let masks = build_masks(self.dim, &self.hidden_sizes, &self.ordering);
        if masks.hidden.len() != self.hidden.len() {
            return Err(Error::config("stored MADE block has inconsistent hidden layers"));
        }
        for (layer, m) in self.hidden.iter_mut().zip(masks.hidden) {
            if layer.w.len() != m.len() {
                return Err(Error::config("stored MADE layer has wrong shape"));
            }
            layer.mask = Some(m);
        }
        if self.mu.w.len() != masks.head.len() || self.log_scale.w.len() != masks.head.len() {
            return Err(Error::config("stored MADE head has wrong shape"));
        }
        self.mu.mask = Some(masks.head.clone());
        self.log_scale.mask = Some(masks.head);
        Ok(())
    }

    /// Shift and unclamped log-scale for one input row.
    pub fn conditioner(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let net = self.hidden_forward(x);
        self.heads(&net)
    }

    fn hidden_forward(&self, x: &[f64]) -> MlpCache {
        let mut acts = Vec::with_capacity(self.hidden.len() + 1);
        acts.push(x.to_vec());
        for (k, layer) in self.hidden.iter().enumerate() {
            let mut out = vec![0.0; layer.n_out];
            layer.forward(&acts[k], &mut out);
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            acts.push(out);
        }
        MlpCache { acts }
    }

    fn heads(&self, net: &MlpCache) -> (Vec<f64>, Vec<f64>) {
        let h = net.acts.last().unwrap();
        let mut mu = vec![0.0; self.dim];
        let mut a = vec![0.0; self.dim];
        self.mu.forward(h, &mut mu);
        self.log_scale.forward(h, &mut a);
        (mu, a)
    }

    /// `u = (x - mu(x)) * exp(-a(x))`; returns `u` and `-sum(a)`.
    pub fn forward_row(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let (mu, a_raw) = self.conditioner(x);
        let mut logdet = 0.0;
        let u = x
            .iter()
            .zip(&mu)
            .zip(&a_raw)
            .map(|((x, m), a)| {
                let a = clamp(*a);
                logdet -= a;
                (x - m) * (-a).exp()
            })
            .collect();
        (u, logdet)
    }

    pub(crate) fn forward_cached(&self, x: &[f64]) -> (BlockCache, f64) {
        let net = self.hidden_forward(x);
        let (mu, a_raw) = self.heads(&net);
        let a: Vec<f64> = a_raw.iter().map(|v| clamp(*v)).collect();
        let u = x
            .iter()
            .zip(&mu)
            .zip(&a)
            .map(|((x, m), a)| (x - m) * (-a).exp())
            .collect();
        let logdet = -a.iter().sum::<f64>();
        (BlockCache { net, a_raw, a, u }, logdet)
    }

    /// Sequential inverse: one conditioner evaluation per coordinate.
    pub fn inverse_row(&self, u: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for &i in &self.ordering {
            let (mu, a) = self.conditioner(&x);
            x[i] = u[i] * clamp(a[i]).exp() + mu[i];
        }
        x
    }

    /// Accumulate parameter gradients given `gu = dL/du` and `gld = dL/dlogdet`;
    /// returns `dL/dx`.
    pub(crate) fn backward(&self, cache: &BlockCache, gu: &[f64], gld: f64, grad: &mut [f64]) -> Vec<f64> {
        let d = self.dim;
        let mut gmu = vec![0.0; d];
        let mut ga = vec![0.0; d];
        let mut gx = vec![0.0; d];
        for i in 0..d {
            let e = (-cache.a[i]).exp();
            gmu[i] = -gu[i] * e;
            gx[i] = gu[i] * e;
            if cache.a_raw[i].abs() < LOG_SCALE_CLAMP {
                ga[i] = -gu[i] * cache.u[i] - gld;
            }
        }
        let offsets = self.offsets();
        let n_hidden = self.hidden.len();
        let h = cache.net.acts.last().unwrap();
        let mut gh = vec![0.0; h.len()];
        self.mu.backward(h, &gmu, &mut grad[offsets[n_hidden]..offsets[n_hidden + 1]], Some(&mut gh));
        self.log_scale.backward(h, &ga, &mut grad[offsets[n_hidden + 1]..offsets[n_hidden + 2]], Some(&mut gh));
        for k in (0..n_hidden).rev() {
            for (g, a) in gh.iter_mut().zip(&cache.net.acts[k + 1]) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            let layer = &self.hidden[k];
            let mut gin = vec![0.0; layer.n_in];
            layer.backward(&cache.net.acts[k], &gh, &mut grad[offsets[k]..offsets[k + 1]], Some(&mut gin));
            gh = gin;
        }
        // gh is now the gradient through the conditioner network
        for (g, n) in gx.iter_mut().zip(&gh) {
            *g += n;
        }
        gx
    }

    fn offsets(&self) -> Vec<usize> {
        let mut o = vec![0];
        for l in self.hidden.iter().chain([&self.mu, &self.log_scale]) {
            o.push(o.last().unwrap() + l.n_params());
        }
        o
    }
}

impl Parameters for MadeBlock {
    fn n_params(&self) -> usize {
        self.hidden.iter().chain([&self.mu, &self.log_scale]).map(Parameters::n_params).sum()
    }

    fn write_params(&self, out: &mut [f64]) {
        let mut off = 0;
        for l in self.hidden.iter().chain([&self.mu, &self.log_scale]) {
            let n = l.n_params();
            l.write_params(&mut out[off..off + n]);
            off += n;
        }
    }

    fn read_params(&mut self, src: &[f64]) {
        let mut off = 0;
        for l in self.hidden.iter_mut().chain([&mut self.mu, &mut self.log_scale]) {
            let n = l.n_params();
            l.read_params(&src[off..off + n]);
            off += n;
        }
    }
}

fn clamp(a: f64) -> f64 {
    a.clamp(-LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)
}

fn check_permutation(ordering: &[usize], dim: usize) -> Result<()> {
    let mut seen = vec![false; dim];
    if ordering.len() != dim {
        return Err(Error::config(format!("ordering has length {}, expected {dim}", ordering.len())));
    }
    for &i in ordering {
        if i >= dim || seen[i] {
            return Err(Error::config(format!("ordering {ordering:?} is not a permutation of 0..{dim}")));
        }
        seen[i] = true;
    }
    Ok(())
}

fn input_degrees(ordering: &[usize]) -> Vec<usize> {
    let mut deg = vec![0; ordering.len()];
    for (pos, &i) in ordering.iter().enumerate() {
        deg[i] = pos + 1;
    }
    deg
}

pub(crate) struct Masks {
    pub hidden: Vec<Vec<f64>>,
    pub head: Vec<f64>,
}

/// Degree-rule masks. Hidden units cycle through degrees `1..dim-1`
/// (all zero when `dim == 1`); a unit of degree `k` sees inputs of degree
/// `<= k`, and output `i` sees units of degree `< deg(i)`.
pub(crate) fn build_masks(dim: usize, hidden_sizes: &[usize], ordering: &[usize]) -> Masks {
    let deg_in = input_degrees(ordering);
    let hidden_deg = |size: usize| -> Vec<usize> {
        (0..size).map(|k| if dim > 1 { 1 + k % (dim - 1) } else { 0 }).collect()
    };
    let mut prev = deg_in.clone();
    let mut hidden = Vec::with_capacity(hidden_sizes.len());
    for &size in hidden_sizes {
        let cur = hidden_deg(size);
        let mut m = vec![0.0; size * prev.len()];
        for (k, dk) in cur.iter().enumerate() {
            for (j, dj) in prev.iter().enumerate() {
                if dk >= dj {
                    m[k * prev.len() + j] = 1.0;
                }
            }
        }
        hidden.push(m);
        prev = cur;
    }
    let mut head = vec![0.0; dim * prev.len()];
    for (i, di) in deg_in.iter().enumerate() {
        for (k, dk) in prev.iter().enumerate() {
            if di > dk {
                head[i * prev.len() + k] = 1.0;
            }
        }
    }
    Masks { hidden, head }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn randomize(block: &mut MadeBlock, seed: u64, scale: f64) {
        let mut r = rng::seeded(seed);
        let mut p = block.params();
        p.iter_mut().for_each(|v| *v += r.random_range(-scale..scale));
        block.read_params(&p);
        // keep masked weights at zero
        for l in block.hidden.iter_mut().chain([&mut block.mu, &mut block.log_scale]) {
            let m = l.mask.clone().unwrap();
            l.w.iter_mut().zip(&m).for_each(|(w, m)| *w *= m);
        }
    }

    #[test]
    fn first_coordinate_is_input_independent() {
        let mut r = rng::seeded(0);
        let mut b = MadeBlock::new(3, &[8], &[0, 1, 2], &mut r).unwrap();
        randomize(&mut b, 1, 0.5);
        let (mu1, a1) = b.conditioner(&[0.1, 0.2, 0.3]);
        let (mu2, a2) = b.conditioner(&[-5.0, 4.0, 9.0]);
        assert_eq!(mu1[0], mu2[0]);
        assert_eq!(a1[0], a2[0]);
        let head = build_masks(3, &[8], &[0, 1, 2]).head;
        assert!(head[..8].iter().all(|m| *m == 0.0));
    }

    #[test]
    fn mask_shapes() {
        let m = build_masks(2, &[4], &[0, 1]);
        assert_eq!(m.hidden.len(), 1);
        assert_eq!(m.hidden[0].len(), 4 * 2);
        assert_eq!(m.head.len(), 2 * 4);
        assert!(m.hidden[0].iter().chain(&m.head).all(|v| *v == 0.0 || *v == 1.0));
        let mut r = rng::seeded(0);
        let b = MadeBlock::new(2, &[4], &[0, 1], &mut r).unwrap();
        assert_eq!((b.hidden[0].n_out, b.hidden[0].n_in), (4, 2));
        assert_eq!((b.mu.n_out, b.mu.n_in), (2, 4));
        assert_eq!((b.log_scale.n_out, b.log_scale.n_in), (2, 4));
    }

    #[test]
    fn dim_one_without_hidden_is_constant() {
        let mut r = rng::seeded(0);
        let mut b = MadeBlock::new(1, &[], &[0], &mut r).unwrap();
        b.mu.b[0] = 1.0;
        b.log_scale.b[0] = 2f64.ln();
        let (u, ld) = b.forward_row(&[5.0]);
        assert!((u[0] - 2.0).abs() < 1e-15);
        assert!((ld + 2f64.ln()).abs() < 1e-15);
        assert!((b.inverse_row(&u)[0] - 5.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_ordering() {
        let mut r = rng::seeded(0);
        assert!(MadeBlock::new(3, &[4], &[0, 0, 1], &mut r).is_err());
        assert!(MadeBlock::new(3, &[0], &[0, 1, 2], &mut r).is_err());
    }

    #[test]
    fn finite_difference_jacobian_is_strictly_triangular() {
        for (dim, ordering, hidden) in [
            (3, vec![0, 1, 2], vec![10]),
            (4, vec![2, 0, 3, 1], vec![12, 9]),
            (3, vec![2, 1, 0], vec![]),
        ] {
            let mut r = rng::seeded(dim as u64);
            let mut b = MadeBlock::new(dim, &hidden, &ordering, &mut r).unwrap();
            randomize(&mut b, 9, 0.7);
            let deg = b.input_degrees();
            let x: Vec<f64> = (0..dim).map(|i| 0.3 * i as f64 - 0.4).collect();
            let h = 1e-5;
            for j in 0..dim {
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                let (mp, ap) = b.conditioner(&xp);
                let (mm, am) = b.conditioner(&xm);
                for i in 0..dim {
                    if deg[j] >= deg[i] {
                        assert!(((mp[i] - mm[i]) / (2.0 * h)).abs() < 1e-6);
                        assert!(((ap[i] - am[i]) / (2.0 * h)).abs() < 1e-6);
                    }
                }
            }
        }
    }
}
