//! Episodic driving task: reset/step, the speed-weighted lane-keeping reward
//! and termination rules.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perception::{observation_columns, sense_with_frame, Observation, RaySensorConfig};
use crate::track::{is_off_road, Track, TrackFrame, TrackKind};
use crate::vehicle::{self, Control, VehicleParams, VehicleState, Weather, KMH_PER_MS};

/// Added to the step reward on every penalized termination.
pub const TERMINATION_PENALTY: f64 = -20.0;

/// Per-step reward before any termination penalty.
///
/// `speed_kmh` scales the alignment term `cos(beta) - |sin(beta)|` minus the
/// absolute lateral offset in meters.
pub fn step_reward(speed_kmh: f64, beta: f64, lateral_offset_m: f64) -> f64 {
    speed_kmh * (beta.cos() - beta.sin().abs() - lateral_offset_m.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub track_kind: TrackKind,
    pub weather: Weather,
    pub dt: f64,
    pub max_episode_steps: usize,
    pub low_speed_threshold_kmh: f64,
    pub low_speed_grace: usize,
    pub termination_penalty: f64,
    /// Forward speed at spawn, m/s.
    pub start_speed: f64,
    pub vehicle: VehicleParams,
    pub sensor: RaySensorConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            track_kind: TrackKind::Straight,
            weather: Weather::Clear,
            dt: 0.05,
            max_episode_steps: 4000,
            low_speed_threshold_kmh: 5.0,
            low_speed_grace: 100,
            termination_penalty: TERMINATION_PENALTY,
            start_speed: 1.0,
            vehicle: VehicleParams::default(),
            sensor: RaySensorConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn with_task(mut self, track_kind: TrackKind, weather: Weather) -> Self {
        self.track_kind = track_kind;
        self.weather = weather;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::InvalidConfig(format!("env.dt must be in (0, 0.1], got {}", self.dt)));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::InvalidConfig("env.max_episode_steps must be > 0".into()));
        }
        if self.termination_penalty != TERMINATION_PENALTY {
            return Err(Error::InvalidConfig(format!(
                "env.termination_penalty is fixed at {TERMINATION_PENALTY}"
            )));
        }
        if !(self.sensor.max_range > 0.0) {
            return Err(Error::InvalidConfig("sensor.max_range must be positive".into()));
        }
        if !(self.start_speed >= 0.0) {
            return Err(Error::InvalidConfig("env.start_speed must be >= 0".into()));
        }
        self.vehicle.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    None,
    OffRoad,
    LowSpeed,
    NonFinite,
    MaxSteps,
    /// Drove past the finish of an open track.
    TrackEnd,
}

impl TerminationReason {
    pub fn is_terminal(self) -> bool {
        self != TerminationReason::None
    }

    pub fn is_penalized(self) -> bool {
        matches!(
            self,
            TerminationReason::OffRoad | TerminationReason::LowSpeed | TerminationReason::NonFinite
        )
    }

    /// Whether value bootstrapping must stop here; time-outs are truncations.
    pub fn ends_value(self) -> bool {
        self.is_terminal() && self != TerminationReason::MaxSteps
    }

    pub fn name(self) -> &'static str {
        match self {
            TerminationReason::None => "none",
            TerminationReason::OffRoad => "off_road",
            TerminationReason::LowSpeed => "low_speed",
            TerminationReason::NonFinite => "non_finite",
            TerminationReason::MaxSteps => "max_steps",
            TerminationReason::TrackEnd => "track_end",
        }
    }
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tracks the consecutive low-speed streak across steps.
#[derive(Debug, Clone, Default)]
pub struct TerminationMonitor {
    low_speed_steps: usize,
}

impl TerminationMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn low_speed_steps(&self) -> usize {
        self.low_speed_steps
    }

    /// Off-road beats low speed, which beats track end and the step budget.
    pub fn check(
        &mut self,
        speed_kmh: f64,
        frame: &TrackFrame,
        past_end: bool,
        step_count: usize,
        width: f64,
        cfg: &EnvConfig,
    ) -> TerminationReason {
        if speed_kmh < cfg.low_speed_threshold_kmh {
            self.low_speed_steps += 1;
        } else {
            self.low_speed_steps = 0;
        }
        if is_off_road(frame, width) {
            TerminationReason::OffRoad
        } else if self.low_speed_steps >= cfg.low_speed_grace {
            TerminationReason::LowSpeed
        } else if past_end {
            TerminationReason::TrackEnd
        } else if step_count >= cfg.max_episode_steps {
            TerminationReason::MaxSteps
        } else {
            TerminationReason::None
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub termination: TerminationReason,
    pub frame: TrackFrame,
    pub speed_kmh: f64,
}

#[derive(Debug, Clone)]
pub struct DrivingEnv {
    cfg: EnvConfig,
    track: Track,
    state: VehicleState,
    frame: TrackFrame,
    observation: Observation,
    monitor: TerminationMonitor,
    steps: usize,
    done: bool,
    seed: u64,
}

impl DrivingEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let track = Track::build(cfg.track_kind);
        let mut env = Self {
            cfg,
            track,
            state: VehicleState::at_rest(Default::default(), 0.0),
            frame: TrackFrame {
                s: 0.0,
                d: 0.0,
                beta: 0.0,
            },
            observation: Observation([0.0; crate::perception::OBS_DIM]),
            monitor: TerminationMonitor::new(),
            steps: 0,
            done: true,
            seed: 0,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn frame(&self) -> &TrackFrame {
        &self.frame
    }

    pub fn observation(&self) -> &Observation {
        &self.observation
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Places the car at the start line, centered and aligned, rolling at
    /// `start_speed`. The spawn is deterministic; `seed` is recorded only.
    pub fn reset(&mut self, seed: u64) -> Observation {
        self.seed = seed;
        let start = self.track.start_point();
        let heading = self.track.heading_at(0.0);
        self.state = VehicleState {
            vx: self.cfg.start_speed,
            ..VehicleState::at_rest(start, heading)
        };
        self.frame = TrackFrame {
            s: 0.0,
            d: 0.0,
            beta: 0.0,
        };
        self.monitor = TerminationMonitor::new();
        self.steps = 0;
        self.done = false;
        let sensed = sense_with_frame(&self.track, &self.state, self.frame, &self.cfg.sensor, &self.cfg.vehicle);
        self.observation = sensed.observation;
        self.observation
    }

    pub fn step(&mut self, action: Control) -> Result<StepResult> {
        if self.done {
            return Err(Error::SteppingTerminatedEnv);
        }
        self.steps += 1;
        let cfg = &self.cfg;
        let next = match vehicle::step(&self.state, action, cfg.weather, &cfg.vehicle, cfg.dt) {
            Ok(next) => next,
            Err(_) => return Ok(self.finish(TerminationReason::NonFinite, cfg.termination_penalty)),
        };
        let frame = match self.track.project(next.position, next.heading) {
            Ok(frame) => frame,
            // Only reachable by leaving the road first; end the episode the same way.
            Err(_) => {
                self.state = next;
                return Ok(self.finish(TerminationReason::OffRoad, cfg.termination_penalty));
            }
        };
        self.state = next;
        self.frame = frame;
        let speed_kmh = next.speed() * KMH_PER_MS;
        let mut reward = step_reward(speed_kmh, frame.beta, frame.d);
        let past_end = self.track.is_past_end(next.position);
        let reason = self
            .monitor
            .check(speed_kmh, &frame, past_end, self.steps, self.track.width(), cfg);
        if reason.is_penalized() {
            reward += cfg.termination_penalty;
        }
        self.done = reason.is_terminal();
        self.observation =
            sense_with_frame(&self.track, &self.state, frame, &cfg.sensor, &cfg.vehicle).observation;
        Ok(StepResult {
            observation: self.observation,
            reward,
            done: self.done,
            termination: reason,
            frame,
            speed_kmh,
        })
    }

    fn finish(&mut self, reason: TerminationReason, reward: f64) -> StepResult {
        self.done = true;
        StepResult {
            observation: self.observation,
            reward,
            done: true,
            termination: reason,
            frame: self.frame,
            speed_kmh: self.state.speed() * KMH_PER_MS,
        }
    }
}

/// One row of a per-step episode log.
#[derive(Debug, Clone)]
pub struct EpisodeLogRow {
    pub step: usize,
    pub action: Control,
    pub result: StepResult,
}

pub fn episode_log_header() -> Vec<String> {
    let mut cols: Vec<String> = [
        "step",
        "steer",
        "throttle_brake",
        "reward",
        "done",
        "termination_reason",
        "s",
        "d",
        "beta",
        "speed_kmh",
    ]
    .map(String::from)
    .to_vec();
    cols.extend(observation_columns());
    cols
}

pub fn write_episode_log(path: &Path, rows: &[EpisodeLogRow]) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "{}", episode_log_header().join(",")).map_err(io)?;
    for row in rows {
        let r = &row.result;
        let mut line = format!(
            "{},{},{},{},{},{},{},{},{},{}",
            row.step,
            row.action.steer,
            row.action.throttle_brake,
            r.reward,
            u8::from(r.done),
            r.termination,
            r.frame.s,
            r.frame.d,
            r.frame.beta,
            r.speed_kmh
        );
        for v in r.observation.as_slice() {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn reward_cases() {
        assert!((step_reward(50.0, 0.0, 0.0) - 50.0).abs() < 1e-9);
        for sp in [0.0, 13.0, 80.0, 150.0] {
            assert!(step_reward(sp, FRAC_PI_4, 0.0).abs() < 1e-9);
        }
        // 36 * (cos 0.1 - sin 0.1 - 0.5), evaluated independently.
        let expected = 36.0 * (0.995_004_165_278_025_8 - 0.099_833_416_646_828_15 - 0.5);
        assert!((step_reward(36.0, 0.1, 0.5) - expected).abs() < 1e-9);
        assert!((step_reward(36.0, 0.1, 0.5) - 14.226).abs() < 1e-3);
        // Side of the road does not matter.
        assert_eq!(step_reward(36.0, 0.1, -0.5), step_reward(36.0, 0.1, 0.5));
    }

    #[test]
    fn reward_is_linear_in_speed() {
        for (beta, d) in [(0.3, 0.2), (-0.7, 1.0), (0.05, 4.0)] {
            let a = step_reward(20.0, beta, d);
            assert!((step_reward(40.0, beta, d) - 2.0 * a).abs() < 1e-9);
            let positive = beta.cos() - beta.sin().abs() > d;
            assert_eq!(a > 0.0, positive);
        }
    }

    fn frame(d: f64) -> TrackFrame {
        TrackFrame { s: 10.0, d, beta: 0.0 }
    }

    #[test]
    fn termination_rules() {
        let cfg = EnvConfig::default();
        let mut m = TerminationMonitor::new();
        assert_eq!(m.check(50.0, &frame(5.2), false, 1, 10.0, &cfg), TerminationReason::OffRoad);

        let mut m = TerminationMonitor::new();
        for i in 1..100 {
            assert_eq!(m.check(2.0, &frame(0.0), false, i, 10.0, &cfg), TerminationReason::None);
        }
        assert_eq!(m.check(10.0, &frame(0.0), false, 100, 10.0, &cfg), TerminationReason::None);
        assert_eq!(m.low_speed_steps(), 0);

        let mut m = TerminationMonitor::new();
        let last = (1..=100).map(|i| m.check(2.0, &frame(0.0), false, i, 10.0, &cfg)).last();
        assert_eq!(last, Some(TerminationReason::LowSpeed));

        let mut m = TerminationMonitor::new();
        let r = m.check(50.0, &frame(0.0), false, cfg.max_episode_steps, 10.0, &cfg);
        assert_eq!(r, TerminationReason::MaxSteps);
        assert!(!r.is_penalized());
        assert!(!r.ends_value());
    }

    #[test]
    fn reset_is_centered_and_repeatable() {
        let mut env = DrivingEnv::new(EnvConfig::default()).unwrap();
        let a = env.reset(7);
        let b = env.reset(7);
        assert_eq!(a, b);
        assert_eq!(a.beta(), 0.0);
        assert_eq!(a.tr_pos_norm(), 0.0);
        for kind in [TrackKind::UTurn, TrackKind::Circuit] {
            let mut other = DrivingEnv::new(EnvConfig::default().with_task(kind, Weather::Clear)).unwrap();
            let o = other.reset(7);
            assert_eq!(o.0.len(), a.0.len());
        }
    }

    #[test]
    fn stepping_after_done_errors() {
        let cfg = EnvConfig {
            max_episode_steps: 3,
            ..EnvConfig::default()
        };
        let mut env = DrivingEnv::new(cfg).unwrap();
        env.reset(0);
        for _ in 0..3 {
            env.step(Control::new(0.0, 1.0)).unwrap();
        }
        assert!(env.is_done());
        assert!(matches!(env.step(Control::default()), Err(Error::SteppingTerminatedEnv)));
    }

    #[test]
    fn penalty_applied_once_on_off_road() {
        let mut env = DrivingEnv::new(EnvConfig::default()).unwrap();
        env.reset(0);
        let mut last = None;
        for _ in 0..2000 {
            let r = env.step(Control::new(1.0, 1.0)).unwrap();
            if r.done {
                last = Some(r);
                break;
            }
        }
        let r = last.expect("hard left must leave the road");
        assert_eq!(r.termination, TerminationReason::OffRoad);
        let pre = step_reward(r.speed_kmh, r.frame.beta, r.frame.d);
        assert!((r.reward - (pre - 20.0)).abs() < 1e-9);
    }

    #[test]
    fn full_brake_from_start_ends_low_speed() {
        let mut env = DrivingEnv::new(EnvConfig::default()).unwrap();
        env.reset(0);
        let mut total = 0.0;
        let mut reason = TerminationReason::None;
        while !env.is_done() {
            let r = env.step(Control::new(0.0, -1.0)).unwrap();
            total += r.reward;
            reason = r.termination;
        }
        assert_eq!(reason, TerminationReason::LowSpeed);
        assert_eq!(env.steps(), 100);
        // Straight-line braking from spawn speed: reward is km/h while rolling.
        let cfg = EnvConfig::default();
        let decel = cfg.vehicle.brake_decel.get(cfg.weather);
        let rolling: f64 = (1..=100)
            .map(|k| 3.6 * (cfg.start_speed - decel * cfg.dt * k as f64).max(0.0))
            .sum();
        let expected = rolling + TERMINATION_PENALTY;
        assert!((total - expected).abs() < 0.1, "{total} vs {expected}");
    }

    #[test]
    fn finishing_an_open_track_is_unpenalized() {
        let mut env = DrivingEnv::new(EnvConfig::default()).unwrap();
        env.reset(0);
        let mut r = env.step(Control::new(0.0, 1.0)).unwrap();
        while !r.done {
            r = env.step(Control::new(0.0, 1.0)).unwrap();
        }
        assert_eq!(r.termination, TerminationReason::TrackEnd);
        assert!(r.reward > 0.0);
    }
}
