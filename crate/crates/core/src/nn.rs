//! Dense feed-forward networks with hand-written reverse-mode gradients,
//! plus the Adam optimizer.
//!
//! Parameters live in one flat vector, layer by layer: the row-major
//! `out x in` weight matrix followed by the `out` biases. Gradients,
//! optimizer moments and soft updates all share that layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale applied to the last layer at init so early outputs sit near zero.
pub const FINAL_LAYER_INIT_SCALE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Linear,
    Tanh,
    /// Linear output read as `[mean.., log_std..]` halves.
    GaussianPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    sizes: Vec<usize>,
    head: OutputHead,
    params: Vec<f64>,
}

/// Per-layer activations from one forward pass; `acts[0]` is the input.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl DenseNet {
    /// All-zero network.
    pub fn zeros(sizes: &[usize], head: OutputHead) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        if head == OutputHead::GaussianPair {
            assert!(sizes[sizes.len() - 1] % 2 == 0, "gaussian head needs an even output size");
        }
        Self {
            sizes: sizes.to_vec(),
            head,
            params: vec![0.0; param_count(sizes)],
        }
    }

    /// Uniform fan-in init, `U(-1/sqrt(n_in), 1/sqrt(n_in))`, final layer shrunk.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], head: OutputHead, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes, head);
        let n_layers = net.n_layers();
        let mut offset = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let mut bound = 1.0 / (n_in as f64).sqrt();
            if l + 1 == n_layers {
                bound *= FINAL_LAYER_INIT_SCALE;
            }
            let count = (n_in + 1) * n_out;
            for p in &mut net.params[offset..offset + count] {
                *p = rng.random_range(-bound..bound);
            }
            offset += count;
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cache = ForwardCache::default();
        self.forward_cached(input, &mut cache)?;
        Ok(cache.acts.pop().unwrap_or_default())
    }

    /// Forward pass keeping every activation for a later `backward`.
    pub fn forward_cached<'c>(&self, input: &[f64], cache: &'c mut ForwardCache) -> Result<&'c [f64]> {
        if input.len() != self.input_size() {
            return Err(Error::ShapeMismatch {
                expected: self.input_size(),
                actual: input.len(),
            });
        }
        let n_layers = self.n_layers();
        cache.acts.resize_with(n_layers + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);
        let mut offset = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, rest) = self.params[offset..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            offset += (n_in + 1) * n_out;
            let (prev, next) = cache.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut next[0];
            y.clear();
            y.extend((0..n_out).map(|j| b[j] + dot(&w[j * n_in..(j + 1) * n_in], x)));
            if l + 1 < n_layers {
                for v in y.iter_mut() {
                    *v = v.max(0.0);
                }
            } else if self.head == OutputHead::Tanh {
                for v in y.iter_mut() {
                    *v = v.tanh();
                }
            }
        }
        Ok(cache.output())
    }

    /// Reverse pass for the cached forward. Parameter gradients are
    /// accumulated into `grads`; the input gradient, if requested, is
    /// overwritten.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
    ) {
        assert_eq!(upstream.len(), self.output_size(), "upstream gradient shape");
        let n_layers = self.n_layers();
        let mut grads = grads;
        if let Some(g) = grads.as_deref() {
            assert_eq!(g.len(), self.params.len(), "gradient buffer shape");
        }
        let mut delta: Vec<f64> = upstream.to_vec();
        if self.head == OutputHead::Tanh {
            for (d, y) in delta.iter_mut().zip(cache.output()) {
                *d *= 1.0 - y * y;
            }
        }
        let mut input_grad = input_grad;
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let offset = self.layer_offset(l);
            let x = &cache.acts[l];
            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = g[offset..offset + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
                for j in 0..n_out {
                    if delta[j] != 0.0 {
                        axpy(delta[j], x, &mut gw[j * n_in..(j + 1) * n_in]);
                        gb[j] += delta[j];
                    }
                }
            }
            if l == 0 && input_grad.is_none() {
                break;
            }
            let w = &self.params[offset..offset + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for j in 0..n_out {
                if delta[j] != 0.0 {
                    axpy(delta[j], &w[j * n_in..(j + 1) * n_in], &mut prev);
                }
            }
            if l == 0 {
                if let Some(ig) = input_grad.as_deref_mut() {
                    ig.copy_from_slice(&prev);
                }
                break;
            }
            // ReLU derivative from the post-activation value.
            for (p, a) in prev.iter_mut().zip(x) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    /// `self <- tau * online + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, online: &DenseNet, tau: f64) {
        assert_eq!(self.sizes, online.sizes, "soft update between different shapes");
        if tau == 1.0 {
            self.params.copy_from_slice(&online.params);
            return;
        }
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn n_params(&self) -> usize {
        self.m.len()
    }

    /// One bias-corrected descent step on `params` along `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "adam parameter shape");
        assert_eq!(grads.len(), self.m.len(), "adam gradient shape");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let step_size = self.lr / c1;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let v_hat = self.v[i] / c2;
            params[i] -= step_size * self.m[i] / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn param_count_formula() {
        let net = DenseNet::zeros(&[23, 256, 256, 4], OutputHead::GaussianPair);
        assert_eq!(net.n_params(), 24 * 256 + 257 * 256 + 257 * 4);
        assert_eq!(param_count(&[25, 256, 256, 1]), 26 * 256 + 257 * 256 + 257);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::zeros(&[5, 7, 3], OutputHead::Linear);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut net = DenseNet::zeros(&[3, 3], OutputHead::Linear);
        for j in 0..3 {
            net.params_mut()[j * 3 + j] = 1.0;
        }
        let x = [0.3, -1.7, 2.5];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = DenseNet::zeros(&[4, 2], OutputHead::Linear);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(Error::ShapeMismatch { expected: 4, actual: 2 })
        ));
    }

    /// Independent evaluation with explicit nested loops, no shared helpers.
    fn reference_forward(net: &DenseNet, x: &[f64]) -> Vec<f64> {
        let sizes = net.sizes();
        let p = net.params();
        let mut a = x.to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (ni, no) = (sizes[l], sizes[l + 1]);
            let mut z = vec![0.0; no];
            for j in 0..no {
                let mut s = p[off + ni * no + j];
                for i in 0..ni {
                    s += p[off + j * ni + i] * a[i];
                }
                z[j] = s;
            }
            off += (ni + 1) * no;
            if l + 2 < sizes.len() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            } else if net.head() == OutputHead::Tanh {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            a = z;
        }
        a
    }

    #[test]
    fn forward_matches_reference() {
        let mut r = rng(3);
        for head in [OutputHead::Linear, OutputHead::Tanh] {
            let mut net = DenseNet::new(&[6, 9, 5, 3], head, &mut r);
            // Undo the final-layer shrink so the last layer matters.
            for p in net.params_mut() {
                *p *= 3.0;
            }
            for _ in 0..20 {
                let x: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
                let got = net.forward(&x).unwrap();
                let want = reference_forward(&net, &x);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-12);
                }
            }
        }
    }

    fn loss(net: &DenseNet, x: &[f64], weights: &[f64]) -> f64 {
        net.forward(x).unwrap().iter().zip(weights).map(|(y, w)| y * w).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(11);
        for head in [OutputHead::Linear, OutputHead::Tanh] {
            let mut net = DenseNet::new(&[4, 8, 3], head, &mut r);
            for p in net.params_mut() {
                *p *= 5.0;
            }
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            let up: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
            let mut cache = ForwardCache::default();
            net.forward_cached(&x, &mut cache).unwrap();
            let mut grads = vec![0.0; net.n_params()];
            let mut gx = vec![0.0; 4];
            net.backward(&cache, &up, Some(&mut grads), Some(&mut gx));
            let h = 1e-5;
            let mut probe = net.clone();
            for i in 0..net.n_params() {
                let orig = probe.params()[i];
                probe.params_mut()[i] = orig + h;
                let lp = loss(&probe, &x, &up);
                probe.params_mut()[i] = orig - h;
                let lm = loss(&probe, &x, &up);
                probe.params_mut()[i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let err = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6);
                assert!(err < 1e-4, "param {i}: fd {fd} analytic {}", grads[i]);
            }
            for i in 0..4 {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (loss(&net, &xp, &up) - loss(&net, &xm, &up)) / (2.0 * h);
                assert!((fd - gx[i]).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn constant_output_stops_gradient_flow() {
        let mut net = DenseNet::new(&[3, 5, 2], OutputHead::Linear, &mut rng(1));
        let last = net.layer_offset(1);
        // Zero the last weight matrix, keep its bias.
        for p in &mut net.params_mut()[last..last + 10] {
            *p = 0.0;
        }
        let mut cache = ForwardCache::default();
        net.forward_cached(&[0.5, -0.2, 0.9], &mut cache).unwrap();
        let mut grads = vec![0.0; net.n_params()];
        net.backward(&cache, &[1.0, -2.0], Some(&mut grads), None);
        assert!(grads[..last].iter().all(|&g| g == 0.0));
        assert_eq!(&grads[last + 10..], &[1.0, -2.0]);
    }

    #[test]
    fn gradients_are_linear_in_upstream() {
        let net = DenseNet::new(&[4, 6, 2], OutputHead::Tanh, &mut rng(5));
        let x = [0.1, 0.7, -0.4, 1.2];
        let mut cache = ForwardCache::default();
        net.forward_cached(&x, &mut cache).unwrap();
        let grad = |up: &[f64]| {
            let mut g = vec![0.0; net.n_params()];
            net.backward(&cache, up, Some(&mut g), None);
            g
        };
        let a = grad(&[1.0, 0.0]);
        let b = grad(&[0.0, 1.0]);
        let sum = grad(&[1.0, 1.0]);
        for i in 0..net.n_params() {
            assert!((sum[i] - (a[i] + b[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut params = vec![0.5, -1.0, 2.0];
        let mut adam = Adam::new(3, 0.01);
        adam.step(&mut params, &[1.0, 1.0, 1.0]);
        for (p, o) in params.iter().zip([0.5, -1.0, 2.0]) {
            assert!(((o - p) - 0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut params = vec![0.5, -1.0];
        let mut adam = Adam::new(2, 0.1);
        for _ in 0..5 {
            adam.step(&mut params, &[0.0, 0.0]);
        }
        assert_eq!(params, vec![0.5, -1.0]);
        assert_eq!(adam.steps_taken(), 5);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut w = vec![0.0];
        let mut adam = Adam::new(1, 0.1);
        for _ in 0..100 {
            let g = 2.0 * (w[0] - 3.0);
            adam.step(&mut w, &[g]);
        }
        assert!((w[0] - 3.0).abs() < 0.5, "{}", w[0]);
    }

    #[test]
    fn soft_update_extremes() {
        let mut r = rng(2);
        let online = DenseNet::new(&[2, 3, 1], OutputHead::Linear, &mut r);
        let mut target = DenseNet::new(&[2, 3, 1], OutputHead::Linear, &mut r);
        let before = target.clone();
        target.soft_update_from(&online, 0.0);
        assert_eq!(target, before);
        target.soft_update_from(&online, 1.0);
        assert_eq!(target.params(), online.params());

        let mut ones = DenseNet::zeros(&[1, 1], OutputHead::Linear);
        ones.params_mut().fill(1.0);
        let mut zeros = DenseNet::zeros(&[1, 1], OutputHead::Linear);
        zeros.soft_update_from(&ones, 0.001);
        assert!(zeros.params().iter().all(|&p| (p - 0.001).abs() < 1e-15));
    }
}
