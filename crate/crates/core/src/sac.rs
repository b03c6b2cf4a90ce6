//! Soft Actor-Critic with a fixed entropy coefficient.
//!
//! ```text
//! critic target  y = c * r + gamma * (1 - done) * (min Q'(s', a') - c * alpha * log pi(a'|s'))
//! critic loss    mean (Q_i(s, a) - y)^2
//! actor loss     mean (c * alpha * log pi(a~|s) - min Q(s, a~)),  a~ reparameterized
//! c = reward_scale; Q is stored in scaled units
//! targets        Q' <- tau * Q + (1 - tau) * Q'
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::{reparam_grads, sample_squashed, squashed_mean};
use crate::error::{Error, Result};
use crate::nn::{Adam, DenseNet, ForwardCache, OutputHead};
use crate::perception::{Observation, OBS_DIM};
use crate::replay::{ReplayBuffer, Transition, ACT_DIM};
use crate::vehicle::Control;

pub const CRITIC_INPUT: usize = OBS_DIM + ACT_DIM;

const CHECKPOINT_FORMAT: &str = "drivelab-sac-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacHyperParams {
    pub lr_value: f64,
    pub lr_policy: f64,
    pub gamma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Carried for completeness; SAC has no use for it.
    pub theta: f64,
    pub update_every: usize,
    pub warmup_steps: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub twin_critics: bool,
    /// Multiplies the whole soft objective: rewards and the entropy bonus alike.
    pub reward_scale: f64,
}

impl Default for SacHyperParams {
    fn default() -> Self {
        Self {
            lr_value: 0.0005,
            lr_policy: 0.0001,
            gamma: 0.995,
            tau: 0.001,
            alpha: 0.2,
            batch_size: 64,
            buffer_capacity: 100_000,
            theta: 0.15,
            update_every: 1,
            warmup_steps: 1000,
            hidden_width: 256,
            hidden_layers: 2,
            twin_critics: true,
            reward_scale: 1.0,
        }
    }
}

impl SacHyperParams {
    /// Entropy coefficient in the scaled units the critics learn.
    pub fn effective_alpha(&self) -> f64 {
        self.alpha * self.reward_scale
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("sac.gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("sac.tau must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad("sac.batch_size must be in [1, buffer_capacity]");
        }
        if !(self.lr_value > 0.0 && self.lr_policy > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.alpha >= 0.0) {
            return bad("sac.alpha must be >= 0");
        }
        if self.update_every == 0 || self.hidden_width == 0 || self.hidden_layers == 0 {
            return bad("sac.update_every, hidden_width and hidden_layers must be positive");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("sac.reward_scale must be positive");
        }
        Ok(())
    }

    pub fn actor_sizes(&self) -> Vec<usize> {
        self.sizes(OBS_DIM, 2 * ACT_DIM)
    }

    pub fn critic_sizes(&self) -> Vec<usize> {
        self.sizes(CRITIC_INPUT, 1)
    }

    fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        s.push(output);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub update_index: u64,
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: f64,
    pub mean_entropy: f64,
    pub mean_q: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "update_index,critic1_loss,critic2_loss,actor_loss,mean_entropy,mean_q";

    pub fn is_finite(&self) -> bool {
        [self.critic1_loss, self.critic2_loss, self.actor_loss, self.mean_entropy, self.mean_q]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.update_index, self.critic1_loss, self.critic2_loss, self.actor_loss, self.mean_entropy, self.mean_q
        )
    }
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    actor: ForwardCache,
    critic1: ForwardCache,
    critic2: ForwardCache,
    grad_actor: Vec<f64>,
    grad_critic1: Vec<f64>,
    grad_critic2: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SacAgent {
    hyper: SacHyperParams,
    actor: DenseNet,
    critic1: DenseNet,
    critic2: DenseNet,
    target1: DenseNet,
    target2: DenseNet,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    rng: ChaCha8Rng,
    updates: u64,
    #[serde(skip)]
    scratch: Scratch,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    agent: SacAgent,
}

fn critic_input(s: &[f64; OBS_DIM], a: &[f64; ACT_DIM]) -> [f64; CRITIC_INPUT] {
    let mut x = [0.0; CRITIC_INPUT];
    x[..OBS_DIM].copy_from_slice(s);
    x[OBS_DIM..].copy_from_slice(a);
    x
}

fn split_head(out: &[f64]) -> ([f64; ACT_DIM], [f64; ACT_DIM]) {
    (
        std::array::from_fn(|i| out[i]),
        std::array::from_fn(|i| out[ACT_DIM + i]),
    )
}

impl SacAgent {
    pub fn new(hyper: SacHyperParams, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = DenseNet::new(&hyper.actor_sizes(), OutputHead::GaussianPair, &mut rng);
        let critic1 = DenseNet::new(&hyper.critic_sizes(), OutputHead::Linear, &mut rng);
        let critic2 = DenseNet::new(&hyper.critic_sizes(), OutputHead::Linear, &mut rng);
        Ok(Self {
            actor_opt: Adam::new(actor.n_params(), hyper.lr_policy),
            critic1_opt: Adam::new(critic1.n_params(), hyper.lr_value),
            critic2_opt: Adam::new(critic2.n_params(), hyper.lr_value),
            target1: critic1.clone(),
            target2: critic2.clone(),
            actor,
            critic1,
            critic2,
            hyper,
            rng,
            updates: 0,
            scratch: Scratch::default(),
        })
    }

    pub fn hyper(&self) -> &SacHyperParams {
        &self.hyper
    }

    pub fn actor(&self) -> &DenseNet {
        &self.actor
    }

    pub fn critics(&self) -> (&DenseNet, &DenseNet) {
        (&self.critic1, &self.critic2)
    }

    pub fn targets(&self) -> (&DenseNet, &DenseNet) {
        (&self.target1, &self.target2)
    }

    pub fn critics_mut(&mut self) -> (&mut DenseNet, &mut DenseNet) {
        (&mut self.critic1, &mut self.critic2)
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Raw actor head `(mean, log_std)` for one observation.
    pub fn policy_head(&self, obs: &[f64; OBS_DIM]) -> ([f64; ACT_DIM], [f64; ACT_DIM]) {
        let out = self.actor.forward(obs).expect("actor input size is fixed");
        split_head(&out)
    }

    pub fn q_values(&self, obs: &[f64; OBS_DIM], action: &[f64; ACT_DIM]) -> (f64, f64) {
        let x = critic_input(obs, action);
        (
            self.critic1.forward(&x).expect("critic input size is fixed")[0],
            self.critic2.forward(&x).expect("critic input size is fixed")[0],
        )
    }

    pub fn act_raw(&mut self, obs: &[f64; OBS_DIM], mode: ActionMode) -> [f64; ACT_DIM] {
        let (mean, log_std) = self.policy_head(obs);
        match mode {
            ActionMode::Deterministic => squashed_mean(&mean),
            ActionMode::Stochastic => sample_squashed(&mean, &log_std, &mut self.rng).action,
        }
    }

    pub fn select_action(&mut self, obs: &Observation, mode: ActionMode) -> Control {
        Control::from_action(self.act_raw(&obs.0, mode))
    }

    /// Target-network lag step.
    pub fn soft_update(&mut self) {
        let tau = self.hyper.tau;
        self.target1.soft_update_from(&self.critic1, tau);
        self.target2.soft_update_from(&self.critic2, tau);
    }

    /// One gradient step on critics and actor from a uniformly sampled batch.
    pub fn update(&mut self, buffer: &mut ReplayBuffer) -> Result<LossReport> {
        let need = self.hyper.batch_size.max(self.hyper.warmup_steps);
        if buffer.len() < need {
            return Err(Error::InsufficientData {
                have: buffer.len(),
                need,
            });
        }
        let idx = buffer.sample_indices(self.hyper.batch_size);
        let batch: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i)).collect();
        let (c1, c2) = self.update_critics(&batch);
        let (actor_loss, entropy, mean_q) = self.update_actor(&batch);
        self.soft_update();
        self.updates += 1;
        Ok(LossReport {
            update_index: self.updates,
            critic1_loss: c1,
            critic2_loss: c2,
            actor_loss,
            mean_entropy: entropy,
            mean_q,
        })
    }

    fn update_critics(&mut self, batch: &[&Transition]) -> (f64, f64) {
        let h = self.hyper;
        let n = batch.len() as f64;
        let sc = &mut self.scratch;
        sc.grad_critic1.clear();
        sc.grad_critic1.resize(self.critic1.n_params(), 0.0);
        sc.grad_critic2.clear();
        sc.grad_critic2.resize(self.critic2.n_params(), 0.0);
        let (mut loss1, mut loss2) = (0.0, 0.0);
        for t in batch {
            let mut y = h.reward_scale * t.r;
            if !t.done {
                let out = self
                    .actor
                    .forward_cached(&t.s_next, &mut sc.actor)
                    .expect("actor input size is fixed");
                let (mean, log_std) = split_head(out);
                let next = sample_squashed(&mean, &log_std, &mut self.rng);
                let x_next = critic_input(&t.s_next, &next.action);
                let q1 = self.target1.forward_cached(&x_next, &mut sc.critic1).expect("shape")[0];
                let q_next = if h.twin_critics {
                    q1.min(self.target2.forward_cached(&x_next, &mut sc.critic2).expect("shape")[0])
                } else {
                    q1
                };
                y += h.gamma * (q_next - h.effective_alpha() * next.log_prob);
            }
            let x = critic_input(&t.s, &t.a);
            let q1 = self.critic1.forward_cached(&x, &mut sc.critic1).expect("shape")[0];
            loss1 += (q1 - y) * (q1 - y);
            self.critic1
                .backward(&sc.critic1, &[2.0 * (q1 - y) / n], Some(&mut sc.grad_critic1), None);
            if h.twin_critics {
                let q2 = self.critic2.forward_cached(&x, &mut sc.critic2).expect("shape")[0];
                loss2 += (q2 - y) * (q2 - y);
                self.critic2
                    .backward(&sc.critic2, &[2.0 * (q2 - y) / n], Some(&mut sc.grad_critic2), None);
            }
        }
        self.critic1_opt.step(self.critic1.params_mut(), &sc.grad_critic1);
        if h.twin_critics {
            self.critic2_opt.step(self.critic2.params_mut(), &sc.grad_critic2);
        }
        (loss1 / n, loss2 / n)
    }

    fn update_actor(&mut self, batch: &[&Transition]) -> (f64, f64, f64) {
        let h = self.hyper;
        let n = batch.len() as f64;
        let sc = &mut self.scratch;
        sc.grad_actor.clear();
        sc.grad_actor.resize(self.actor.n_params(), 0.0);
        let (mut loss, mut sum_logp, mut sum_q) = (0.0, 0.0, 0.0);
        let mut input_grad = [0.0; CRITIC_INPUT];
        for t in batch {
            let out = self.actor.forward_cached(&t.s, &mut sc.actor).expect("shape");
            let (mean, log_std) = split_head(out);
            let sample = sample_squashed(&mean, &log_std, &mut self.rng);
            let x = critic_input(&t.s, &sample.action);
            let q1 = self.critic1.forward_cached(&x, &mut sc.critic1).expect("shape")[0];
            let use_second = h.twin_critics && {
                let q2 = self.critic2.forward_cached(&x, &mut sc.critic2).expect("shape")[0];
                q2 < q1
            };
            let q = if use_second {
                self.critic2.backward(&sc.critic2, &[1.0], None, Some(&mut input_grad));
                sc.critic2.output()[0]
            } else {
                self.critic1.backward(&sc.critic1, &[1.0], None, Some(&mut input_grad));
                q1
            };
            loss += h.effective_alpha() * sample.log_prob - q;
            sum_logp += sample.log_prob;
            sum_q += q;
            let dl_da: [f64; ACT_DIM] = std::array::from_fn(|i| -input_grad[OBS_DIM + i] / n);
            let (d_mean, d_log_std) = reparam_grads(&sample, &log_std, &dl_da, h.effective_alpha() / n);
            let mut upstream = [0.0; 2 * ACT_DIM];
            upstream[..ACT_DIM].copy_from_slice(&d_mean);
            upstream[ACT_DIM..].copy_from_slice(&d_log_std);
            self.actor.backward(&sc.actor, &upstream, Some(&mut sc.grad_actor), None);
        }
        self.actor_opt.step(self.actor.params_mut(), &sc.grad_actor);
        (loss / n, -sum_logp / n, sum_q / n)
    }

    /// Actor loss and its analytic parameter gradient on fixed noise; used
    /// to verify the reparameterized gradient path.
    pub fn actor_loss_and_grad(&self, states: &[[f64; OBS_DIM]], noise: &[[f64; ACT_DIM]]) -> (f64, Vec<f64>) {
        let n = states.len() as f64;
        let mut grad = vec![0.0; self.actor.n_params()];
        let mut loss = 0.0;
        let mut actor_cache = ForwardCache::default();
        let mut c1 = ForwardCache::default();
        let mut c2 = ForwardCache::default();
        let mut input_grad = [0.0; CRITIC_INPUT];
        for (s, eps) in states.iter().zip(noise) {
            let out = self.actor.forward_cached(s, &mut actor_cache).expect("shape");
            let (mean, log_std) = split_head(out);
            let sample = crate::distribution::squash_with_noise(&mean, &log_std, eps);
            let x = critic_input(s, &sample.action);
            let q1 = self.critic1.forward_cached(&x, &mut c1).expect("shape")[0];
            let q2 = if self.hyper.twin_critics {
                self.critic2.forward_cached(&x, &mut c2).expect("shape")[0]
            } else {
                f64::INFINITY
            };
            let q = if q2 < q1 {
                self.critic2.backward(&c2, &[1.0], None, Some(&mut input_grad));
                q2
            } else {
                self.critic1.backward(&c1, &[1.0], None, Some(&mut input_grad));
                q1
            };
            loss += (self.hyper.effective_alpha() * sample.log_prob - q) / n;
            let dl_da: [f64; ACT_DIM] = std::array::from_fn(|i| -input_grad[OBS_DIM + i] / n);
            let (d_mean, d_log_std) = reparam_grads(&sample, &log_std, &dl_da, self.hyper.effective_alpha() / n);
            let mut upstream = [0.0; 2 * ACT_DIM];
            upstream[..ACT_DIM].copy_from_slice(&d_mean);
            upstream[ACT_DIM..].copy_from_slice(&d_log_std);
            self.actor.backward(&actor_cache, &upstream, Some(&mut grad), None);
        }
        (loss, grad)
    }

    pub fn actor_mut(&mut self) -> &mut DenseNet {
        &mut self.actor
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            agent: self.clone(),
        };
        let json = serde_json::to_vec(&file).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::CorruptCheckpoint(format!("unexpected format `{}`", header.format)));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch(format!(
                "checkpoint version {} but this build reads {CHECKPOINT_VERSION}",
                header.version
            )));
        }
        let file: CheckpointFile =
            serde_json::from_slice(&bytes).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let agent = file.agent;
        agent.check_consistency()?;
        Ok(agent)
    }

    /// Loads a checkpoint and insists it was built for `expected`'s architecture.
    pub fn load_checkpoint_for(path: &Path, expected: &SacHyperParams) -> Result<Self> {
        let agent = Self::load_checkpoint(path)?;
        if agent.actor.sizes() != expected.actor_sizes().as_slice()
            || agent.critic1.sizes() != expected.critic_sizes().as_slice()
        {
            return Err(Error::VersionMismatch(format!(
                "checkpoint actor {:?} / critic {:?} does not match expected actor {:?} / critic {:?}",
                agent.actor.sizes(),
                agent.critic1.sizes(),
                expected.actor_sizes(),
                expected.critic_sizes()
            )));
        }
        Ok(agent)
    }

    fn check_consistency(&self) -> Result<()> {
        let h = &self.hyper;
        let nets = [
            (&self.actor, h.actor_sizes()),
            (&self.critic1, h.critic_sizes()),
            (&self.critic2, h.critic_sizes()),
            (&self.target1, h.critic_sizes()),
            (&self.target2, h.critic_sizes()),
        ];
        for (net, sizes) in nets {
            if net.sizes() != sizes.as_slice() {
                return Err(Error::VersionMismatch(format!(
                    "network {:?} disagrees with stored hyper-parameters {:?}",
                    net.sizes(),
                    sizes
                )));
            }
            if net.n_params() != crate::nn::param_count(net.sizes()) || !net.is_finite() {
                return Err(Error::CorruptCheckpoint("bad parameter block".into()));
            }
        }
        let opts = [
            (&self.actor_opt, &self.actor),
            (&self.critic1_opt, &self.critic1),
            (&self.critic2_opt, &self.critic2),
        ];
        if opts.iter().any(|(o, n)| o.n_params() != n.n_params()) {
            return Err(Error::CorruptCheckpoint("optimizer state shape".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SacAgent {
        let hyper = SacHyperParams {
            hidden_width: 16,
            warmup_steps: 64,
            ..SacHyperParams::default()
        };
        SacAgent::new(hyper, seed).unwrap()
    }

    #[test]
    fn targets_start_equal_and_critics_differ() {
        let a = small(1);
        assert_eq!(a.critic1.params(), a.target1.params());
        assert_eq!(a.critic2.params(), a.target2.params());
        assert_ne!(a.critic1.params(), a.critic2.params());
        assert_eq!(a.critic1.input_size(), 25);
        assert_eq!(a.actor.input_size(), 23);
        assert_eq!(a.actor.output_size(), 4);
    }

    #[test]
    fn untrained_deterministic_action_is_near_zero() {
        let mut a = small(2);
        let obs = Observation([0.3; OBS_DIM]);
        let u = a.select_action(&obs, ActionMode::Deterministic);
        assert!(u.steer.abs() < 0.05 && u.throttle_brake.abs() < 0.05);
    }

    #[test]
    fn stochastic_actions_reproducible_and_bounded() {
        let obs = Observation([0.1; OBS_DIM]);
        let run = |seed| {
            let mut a = small(seed);
            (0..50).map(|_| a.act_raw(&obs.0, ActionMode::Stochastic)).collect::<Vec<_>>()
        };
        let x = run(9);
        assert_eq!(x, run(9));
        assert!(x.iter().flatten().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn update_requires_data() {
        let mut a = small(3);
        let mut buf = ReplayBuffer::new(100, 0);
        assert!(matches!(a.update(&mut buf), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn soft_update_tau_one_copies() {
        let mut a = SacAgent::new(
            SacHyperParams {
                hidden_width: 8,
                tau: 1.0,
                ..SacHyperParams::default()
            },
            0,
        )
        .unwrap();
        a.critic1.params_mut()[0] += 1.0;
        a.soft_update();
        assert_eq!(a.target1.params(), a.critic1.params());
    }

    #[test]
    fn target_lag_follows_geometric_decay() {
        let tau = 0.01;
        let mut a = SacAgent::new(
            SacHyperParams {
                hidden_width: 4,
                tau,
                ..SacHyperParams::default()
            },
            0,
        )
        .unwrap();
        let t0 = a.target1.params().to_vec();
        let p: Vec<f64> = (0..t0.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        a.critic1.set_params(&p).unwrap();
        let n = 250;
        for _ in 0..n {
            a.soft_update();
        }
        let decay = (1.0 - tau).powi(n);
        for i in 0..p.len() {
            let want = p[i] + decay * (t0[i] - p[i]);
            assert!((a.target1.params()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_rejects_garbage_and_other_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        std::fs::write(&path, b"{not json").unwrap();
        assert!(matches!(SacAgent::load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));

        small(4).save_checkpoint(&path).unwrap();
        let other = SacHyperParams {
            hidden_width: 32,
            ..SacHyperParams::default()
        };
        assert!(matches!(
            SacAgent::load_checkpoint_for(&path, &other),
            Err(Error::VersionMismatch(_))
        ));

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen("\"version\":1", "\"version\":99", 1)).unwrap();
        assert!(matches!(SacAgent::load_checkpoint(&path), Err(Error::VersionMismatch(_))));
    }

    fn state(tag: f64) -> [f64; OBS_DIM] {
        std::array::from_fn(|i| ((i as f64 + 1.0) * tag).sin() * 0.5)
    }

    fn terminal(s: [f64; OBS_DIM], a: [f64; ACT_DIM], r: f64) -> Transition {
        Transition {
            s,
            a,
            r,
            s_next: s,
            done: true,
        }
    }

    #[test]
    fn critic_reaches_terminal_fixed_point() {
        let mut a = small(5);
        let s = state(0.7);
        let act = [0.2, -0.4];
        let mut buf = ReplayBuffer::new(1000, 5);
        for _ in 0..64 {
            buf.push(terminal(s, act, 1.0));
        }
        for _ in 0..2000 {
            a.update(&mut buf).unwrap();
        }
        let (q1, q2) = a.q_values(&s, &act);
        assert!((q1 - 1.0).abs() <= 0.01 && (q2 - 1.0).abs() <= 0.01, "{q1} {q2}");
    }

    const BANDIT_OPT: [f64; ACT_DIM] = [0.3, -0.5];

    fn bandit_reward(a: &[f64; ACT_DIM]) -> f64 {
        -(a[0] - BANDIT_OPT[0]).powi(2) - (a[1] - BANDIT_OPT[1]).powi(2)
    }

    fn bandit_hyper(alpha: f64) -> SacHyperParams {
        SacHyperParams {
            hidden_width: 32,
            lr_value: 1e-3,
            lr_policy: 1e-3,
            alpha,
            warmup_steps: 256,
            ..SacHyperParams::default()
        }
    }

    /// Trains on a one-step bandit with the agent's own stochastic actions.
    fn train_bandit(alpha: f64, seed: u64, steps: usize) -> SacAgent {
        let mut agent = SacAgent::new(bandit_hyper(alpha), seed).unwrap();
        let mut buf = ReplayBuffer::new(20_000, seed);
        let s = state(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for t in 0..steps {
            let act = if t < 256 {
                use rand::Rng;
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
            } else {
                agent.act_raw(&s, ActionMode::Stochastic)
            };
            buf.push(terminal(s, act, bandit_reward(&act)));
            if buf.len() >= 256 {
                agent.update(&mut buf).unwrap();
            }
        }
        agent
    }

    #[test]
    fn bandit_actor_finds_argmax() {
        for seed in 0..3 {
            let mut agent = train_bandit(0.0, seed, 6000);
            let best = agent.act_raw(&state(0.3), ActionMode::Deterministic);
            for i in 0..ACT_DIM {
                assert!((best[i] - BANDIT_OPT[i]).abs() < 0.05, "seed {seed}: {best:?}");
            }
        }
    }

    fn mean_entropy(agent: &mut SacAgent) -> f64 {
        let s = state(0.3);
        let (mean, log_std) = agent.policy_head(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 2000;
        -(0..n).map(|_| sample_squashed(&mean, &log_std, &mut rng).log_prob).sum::<f64>() / n as f64
    }

    #[test]
    fn larger_alpha_keeps_more_entropy() {
        for seed in 0..3 {
            let lo = mean_entropy(&mut train_bandit(0.01, seed, 1500));
            let hi = mean_entropy(&mut train_bandit(0.5, seed, 1500));
            assert!(hi > lo, "seed {seed}: {hi} <= {lo}");
        }
    }

    #[test]
    fn losses_stay_finite_on_random_data() {
        use rand::Rng;
        let mut a = SacAgent::new(
            SacHyperParams {
                hidden_width: 16,
                warmup_steps: 64,
                ..SacHyperParams::default()
            },
            6,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut buf = ReplayBuffer::new(5000, 6);
        for _ in 0..5000 {
            buf.push(Transition {
                s: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                a: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                r: rng.random_range(-20.0..2.0),
                s_next: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                done: rng.random_bool(0.05),
            });
        }
        for _ in 0..10_000 {
            let rep = a.update(&mut buf).unwrap();
            assert!(rep.is_finite(), "{rep:?}");
        }
    }

    #[test]
    fn single_critic_mode_trains_only_first() {
        let mut a = SacAgent::new(
            SacHyperParams {
                hidden_width: 8,
                warmup_steps: 64,
                twin_critics: false,
                ..SacHyperParams::default()
            },
            7,
        )
        .unwrap();
        let before = a.critic2.params().to_vec();
        let mut buf = ReplayBuffer::new(100, 7);
        for _ in 0..64 {
            buf.push(terminal(state(0.1), [0.0, 0.0], 1.0));
        }
        let rep = a.update(&mut buf).unwrap();
        assert_eq!(a.critic2.params(), before.as_slice());
        assert_eq!(rep.critic2_loss, 0.0);
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut a = small(8);
        // Push weights away from the tiny initial head so the test is not trivial.
        for p in a.actor.params_mut() {
            *p *= 3.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        use rand_distr::{Distribution, StandardNormal};
        let states: Vec<[f64; OBS_DIM]> = (0..4).map(|k| state(0.2 + k as f64)).collect();
        let noise: Vec<[f64; ACT_DIM]> = (0..4)
            .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng)))
            .collect();
        let (_, grad) = a.actor_loss_and_grad(&states, &noise);
        let h = 1e-6;
        let n = a.actor.n_params();
        for k in (0..n).step_by(n / 40) {
            let orig = a.actor.params()[k];
            a.actor.params_mut()[k] = orig + h;
            let up = a.actor_loss_and_grad(&states, &noise).0;
            a.actor.params_mut()[k] = orig - h;
            let dn = a.actor_loss_and_grad(&states, &noise).0;
            a.actor.params_mut()[k] = orig;
            let fd = (up - dn) / (2.0 * h);
            let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
            assert!(err < 1e-4, "param {k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn reward_scale_scales_entropy_term() {
        let states: Vec<[f64; OBS_DIM]> = (0..3).map(|k| state(0.4 + k as f64)).collect();
        let noise = vec![[0.3, -0.7]; 3];
        let loss_at = |scale: f64| {
            let mut a = small(12);
            a.hyper.reward_scale = scale;
            for c in [&mut a.critic1, &mut a.critic2] {
                c.params_mut().iter_mut().for_each(|p| *p = 0.0);
            }
            a.actor_loss_and_grad(&states, &noise).0
        };
        let base = loss_at(1.0);
        assert!(base.abs() > 1e-6);
        assert!((loss_at(0.25) - 0.25 * base).abs() < 1e-12 * base.abs().max(1.0));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.json");
        let mut a = small(10);
        let mut buf = ReplayBuffer::new(500, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        use rand::Rng;
        for k in 0..200 {
            buf.push(Transition {
                s: state(k as f64 * 0.01),
                a: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                r: rng.random_range(-1.0..1.0),
                s_next: state(k as f64 * 0.01 + 0.005),
                done: k % 17 == 0,
            });
        }
        for _ in 0..5 {
            a.update(&mut buf).unwrap();
        }
        a.save_checkpoint(&path).unwrap();
        let mut b = SacAgent::load_checkpoint(&path).unwrap();
        for _ in 0..100 {
            let obs: [f64; OBS_DIM] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            assert_eq!(
                a.act_raw(&obs, ActionMode::Deterministic),
                b.act_raw(&obs, ActionMode::Deterministic)
            );
        }
        let mut buf_b = buf.clone();
        let ra = a.update(&mut buf).unwrap();
        let rb = b.update(&mut buf_b).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.actor.params(), b.actor.params());
        assert_eq!(a.critic1.params(), b.critic1.params());
        assert_eq!(a.target2.params(), b.target2.params());
    }
}
