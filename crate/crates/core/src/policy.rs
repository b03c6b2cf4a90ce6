use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::DrivingEnv;
use crate::geom::{wrap_angle, Vec2};
use crate::sac::{ActionMode, SacAgent};
use crate::vehicle::Control;

pub trait Policy {
    fn act(&mut self, env: &DrivingEnv) -> Control;
}

/// Deterministic SAC policy (`tanh(mean)`).
pub struct GreedySac<'a>(pub &'a mut SacAgent);

impl Policy for GreedySac<'_> {
    fn act(&mut self, env: &DrivingEnv) -> Control {
        self.0.select_action(env.observation(), ActionMode::Deterministic)
    }
}

/// Uniform random actions over the full control box.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _env: &DrivingEnv) -> Control {
        Control::new(self.rng.random_range(-1.0..=1.0), self.rng.random_range(-1.0..=1.0))
    }
}

/// Pure-pursuit centerline follower with curvature-aware speed planning.
///
/// Reads the true vehicle state and track geometry, so it is a reference
/// driver, not a learner.
#[derive(Debug, Clone, Copy)]
pub struct ScriptedDriver {
    pub min_lookahead: f64,
    pub lookahead_time: f64,
    /// Fraction of the available grip and braking used for planning.
    pub margin: f64,
    pub speed_gain: f64,
}

impl Default for ScriptedDriver {
    fn default() -> Self {
        Self {
            min_lookahead: 8.0,
            lookahead_time: 0.8,
            margin: 0.8,
            speed_gain: 1.0,
        }
    }
}

impl ScriptedDriver {
    fn target_point(&self, env: &DrivingEnv, s: f64) -> Vec2 {
        let track = env.track();
        if !track.is_closed() && s > track.total_length() {
            let end = track.end_point();
            let dir = Vec2::from_angle(track.heading_at(track.total_length()));
            end + dir * (s - track.total_length())
        } else {
            track.point_at(s)
        }
    }

    fn target_speed(&self, env: &DrivingEnv, s: f64, speed: f64) -> f64 {
        let cfg = env.config();
        let params = &cfg.vehicle;
        let track = env.track();
        let lat = self.margin * cfg.weather.grip_scale() * params.max_lateral_accel_dry;
        let brake = self.margin * params.brake_decel.get(cfg.weather);
        let horizon = speed * speed / (2.0 * brake) + 20.0;
        let mut target = params.top_speed;
        let mut x = 0.0;
        while x <= horizon {
            let ahead = s + x;
            if !track.is_closed() && ahead > track.total_length() {
                break;
            }
            let kappa = track.curvature_at(ahead).abs();
            if kappa > 0.0 {
                let corner = (lat / kappa).sqrt();
                target = target.min((corner * corner + 2.0 * brake * x).sqrt());
            }
            x += 2.0;
        }
        target
    }
}

impl Policy for ScriptedDriver {
    fn act(&mut self, env: &DrivingEnv) -> Control {
        let state = env.state();
        let params = &env.config().vehicle;
        let speed = state.speed();
        let s = env.frame().s;
        let lookahead = self.min_lookahead.max(self.lookahead_time * speed);
        let target = self.target_point(env, s + lookahead) - state.position;
        let alpha = wrap_angle(target.angle() - state.heading);
        let dist = target.norm().max(1e-6);
        let steer_angle = (2.0 * params.wheelbase * alpha.sin() / dist).atan();
        let steer = steer_angle / params.max_steer_angle;
        let throttle = self.speed_gain * (self.target_speed(env, s, speed) - speed);
        Control::new(steer, throttle)
    }
}

/// Runs one episode from reset; returns the episode return, why it ended and
/// its length in steps.
pub fn rollout(
    env: &mut DrivingEnv,
    policy: &mut dyn Policy,
    seed: u64,
) -> crate::Result<(f64, crate::env::TerminationReason, usize)> {
    env.reset(seed);
    let mut total = 0.0;
    loop {
        let action = policy.act(env);
        let r = env.step(action)?;
        total += r.reward;
        if r.done {
            return Ok((total, r.termination, env.steps()));
        }
    }
}
