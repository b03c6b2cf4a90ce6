//! Tanh-squashed diagonal Gaussian policy head.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Keeps `log(1 - tanh^2)` finite when the action saturates.
pub const SQUASH_EPS: f64 = 1e-6;

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

pub fn clamp_log_std(raw: f64) -> f64 {
    raw.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

/// A reparameterized draw `a = tanh(mean + std * noise)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquashedSample<const N: usize> {
    pub action: [f64; N],
    pub log_prob: f64,
    pub noise: [f64; N],
}

pub fn sample_squashed<const N: usize, R: Rng + ?Sized>(
    mean: &[f64; N],
    log_std_raw: &[f64; N],
    rng: &mut R,
) -> SquashedSample<N> {
    let noise: [f64; N] = std::array::from_fn(|_| rng.sample(StandardNormal));
    squash_with_noise(mean, log_std_raw, &noise)
}

/// Deterministic part of `sample_squashed` for a given standard-normal draw.
pub fn squash_with_noise<const N: usize>(
    mean: &[f64; N],
    log_std_raw: &[f64; N],
    noise: &[f64; N],
) -> SquashedSample<N> {
    let mut action = [0.0; N];
    let mut log_prob = 0.0;
    for i in 0..N {
        let log_std = clamp_log_std(log_std_raw[i]);
        let u = mean[i] + log_std.exp() * noise[i];
        let a = u.tanh();
        action[i] = a;
        log_prob += -0.5 * noise[i] * noise[i] - log_std - HALF_LOG_TWO_PI - (1.0 - a * a + SQUASH_EPS).ln();
    }
    SquashedSample {
        action,
        log_prob,
        noise: *noise,
    }
}

/// Log-density of a given squashed action in (-1, 1).
pub fn log_prob_of_action<const N: usize>(mean: &[f64; N], log_std_raw: &[f64; N], action: &[f64; N]) -> f64 {
    (0..N)
        .map(|i| {
            let log_std = clamp_log_std(log_std_raw[i]);
            let std = log_std.exp();
            let a = action[i];
            let u = a.atanh();
            let z = (u - mean[i]) / std;
            -0.5 * z * z - log_std - HALF_LOG_TWO_PI - (1.0 - a * a + SQUASH_EPS).ln()
        })
        .sum()
}

/// Deterministic action `tanh(mean)`.
pub fn squashed_mean<const N: usize>(mean: &[f64; N]) -> [f64; N] {
    mean.map(f64::tanh)
}

/// Gradients of `d_loss_d_action . a + d_loss_d_logp * log_prob` with
/// respect to the raw head outputs `(mean, log_std_raw)`, holding the noise
/// fixed. Clamped log-std entries get zero gradient.
pub fn reparam_grads<const N: usize>(
    sample: &SquashedSample<N>,
    log_std_raw: &[f64; N],
    d_loss_d_action: &[f64; N],
    d_loss_d_logp: f64,
) -> ([f64; N], [f64; N]) {
    let mut d_mean = [0.0; N];
    let mut d_log_std = [0.0; N];
    for i in 0..N {
        let a = sample.action[i];
        let one_minus = 1.0 - a * a;
        // d log_prob / d u through the -log(1 - tanh^2 + eps) term.
        let dlogp_du = 2.0 * a * one_minus / (one_minus + SQUASH_EPS);
        let du = d_loss_d_action[i] * one_minus + d_loss_d_logp * dlogp_du;
        d_mean[i] = du;
        let in_range = (LOG_STD_MIN..=LOG_STD_MAX).contains(&log_std_raw[i]);
        if in_range {
            let std = clamp_log_std(log_std_raw[i]).exp();
            d_log_std[i] = du * std * sample.noise[i] - d_loss_d_logp;
        }
    }
    (d_mean, d_log_std)
}

/// Entropy of the unsquashed Gaussian, for diagnostics.
pub fn gaussian_entropy<const N: usize>(log_std_raw: &[f64; N]) -> f64 {
    log_std_raw
        .iter()
        .map(|&l| 0.5 * (2.0 * PI * std::f64::consts::E).ln() + clamp_log_std(l))
        .sum()
}
