//! Small dense networks with hand-written backpropagation, and the AdamW
//! update rule.
//!
//! Parameters of every model are exchanged as flat `f64` slices so gradients
//! of whole batches can be accumulated by [`crate::par::chunked_sum`].

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// Flat parameter access shared by all trainable models.
pub trait Parameters {
    fn n_params(&self) -> usize;
    fn write_params(&self, out: &mut [f64]);
    fn read_params(&mut self, src: &[f64]);

    fn params(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_params()];
        self.write_params(&mut v);
        v
    }
}

/// Affine layer `y = W x + b`, optionally with a fixed 0/1 connectivity mask.
///
/// Masked weights are zero at initialization and receive zero gradient, so
/// they stay zero under AdamW.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(skip)]
    pub mask: Option<Vec<f64>>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
            mask: None,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(n_in: usize, n_out: usize, mask: Option<Vec<f64>>, rng: &mut Rng) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let mut w: Vec<f64> = (0..n_in * n_out).map(|_| rng.random_range(-limit..limit)).collect();
        if let Some(m) = &mask {
            w.iter_mut().zip(m).for_each(|(w, m)| *w *= m);
        }
        Self {
            n_in,
            n_out,
            w,
            b: vec![0.0; n_out],
            mask,
        }
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, y) in out.iter_mut().enumerate() {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            *y = self.b[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    /// Accumulate parameter gradients into `grad` (layout `[w, b]`) and,
    /// when requested, the input gradient into `gx`.
    pub fn backward(&self, x: &[f64], gout: &[f64], grad: &mut [f64], gx: Option<&mut [f64]>) {
        let (gw, gb) = grad.split_at_mut(self.n_in * self.n_out);
        for (o, &g) in gout.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let gw_row = &mut gw[o * self.n_in..(o + 1) * self.n_in];
            match &self.mask {
                Some(m) => {
                    let m_row = &m[o * self.n_in..(o + 1) * self.n_in];
                    for ((gw, x), m) in gw_row.iter_mut().zip(x).zip(m_row) {
                        *gw += g * x * m;
                    }
                }
                None => {
                    for (gw, x) in gw_row.iter_mut().zip(x) {
                        *gw += g * x;
                    }
                }
            }
        }
        if let Some(gx) = gx {
            for (o, &g) in gout.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
                for (gx, w) in gx.iter_mut().zip(row) {
                    *gx += g * w;
                }
            }
        }
    }
}

impl Parameters for Dense {
    fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn write_params(&self, out: &mut [f64]) {
        let (w, b) = out.split_at_mut(self.w.len());
        w.copy_from_slice(&self.w);
        b.copy_from_slice(&self.b);
    }

    fn read_params(&mut self, src: &[f64]) {
        let (w, b) = src.split_at(self.w.len());
        self.w.copy_from_slice(w);
        self.b.copy_from_slice(b);
    }
}

/// Feed-forward ReLU network with a linear output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward_cached`]: `acts[0]` is the input,
/// `acts[k]` the post-ReLU output of layer `k-1`, and the last entry the raw
/// output.
pub struct MlpCache {
    pub acts: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(n_in: usize, hidden: &[usize], n_out: usize, rng: &mut Rng) -> Self {
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(hidden);
        sizes.push(n_out);
        let layers = sizes
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], None, rng))
            .collect();
        Self { layers }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map(|l| l.n_out).unwrap_or(0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> MlpCache {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.n_out];
            layer.forward(&acts[k], &mut out);
            if k < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        MlpCache { acts }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).acts.pop().unwrap_or_default()
    }

    /// Backpropagate `gout` (gradient w.r.t. the raw output). Returns the
    /// gradient w.r.t. the input when `want_input` is set.
    pub fn backward(&self, cache: &MlpCache, gout: &[f64], grad: &mut [f64], want_input: bool) -> Option<Vec<f64>> {
        let offsets = self.offsets();
        let mut g = gout.to_vec();
        let last = self.layers.len() - 1;
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &cache.acts[k];
            let need_gx = k > 0 || want_input;
            let mut gx = if need_gx { vec![0.0; layer.n_in] } else { Vec::new() };
            layer.backward(
                input,
                &g,
                &mut grad[offsets[k]..offsets[k + 1]],
                need_gx.then_some(gx.as_mut_slice()),
            );
            if k == 0 {
                return want_input.then_some(gx);
            }
            // ReLU gate of the previous layer's output
            debug_assert!(k - 1 < last);
            for (gx, a) in gx.iter_mut().zip(&cache.acts[k]) {
                if *a <= 0.0 {
                    *gx = 0.0;
                }
            }
            g = gx;
        }
        None
    }

    fn offsets(&self) -> Vec<usize> {
        let mut o = vec![0];
        for l in &self.layers {
            o.push(o.last().unwrap() + l.n_params());
        }
        o
    }
}

impl Parameters for Mlp {
    fn n_params(&self) -> usize {
        self.layers.iter().map(Parameters::n_params).sum()
    }

    fn write_params(&self, out: &mut [f64]) {
        let mut off = 0;
        for l in &self.layers {
            let n = l.n_params();
            l.write_params(&mut out[off..off + n]);
            off += n;
        }
    }

    fn read_params(&mut self, src: &[f64]) {
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.n_params();
            l.read_params(&src[off..off + n]);
            off += n;
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            params[i] -= self.lr * self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross entropy of a logit against a {0,1} target, computed stably.
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut r = rng::seeded(3);
        let mut net = Mlp::new(3, &[5, 4], 2, &mut r);
        for l in &mut net.layers {
            l.b.iter_mut().for_each(|b| *b = r.random_range(-0.5..0.5));
        }
        let x = [0.3, -1.2, 0.7];
        let loss = |n: &Mlp, x: &[f64]| {
            let y = n.forward(x);
            y[0] * 1.5 - y[1] * y[1]
        };
        let cache = net.forward_cached(&x);
        let y = cache.acts.last().unwrap().clone();
        let mut grad = vec![0.0; net.n_params()];
        let gx = net.backward(&cache, &[1.5, -2.0 * y[1]], &mut grad, true).unwrap();
        let p0 = net.params();
        let h = 1e-6;
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += h;
            net.read_params(&p);
            let up = loss(&net, &x);
            p[i] -= 2.0 * h;
            net.read_params(&p);
            let dn = loss(&net, &x);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
        net.read_params(&p0);
        for j in 0..3 {
            let mut xp = x;
            xp[j] += h;
            let mut xm = x;
            xm[j] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!((fd - gx[j]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut opt = AdamW::new(2, 0.1, 0.0);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn bce_is_stable() {
        assert!((bce_with_logit(0.0, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!(bce_with_logit(800.0, 1.0).abs() < 1e-300);
        assert!((bce_with_logit(-800.0, 1.0) - 800.0).abs() < 1e-9);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
    }
}
