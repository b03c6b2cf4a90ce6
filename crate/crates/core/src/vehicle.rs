//! Friction-scaled kinematic bicycle.
//!
//! Weather enters through two channels: the braking deceleration, calibrated
//! so a full stop from 80 km/h matches measured distances, and a grip scale
//! that caps lateral and engine acceleration. Commanded lateral acceleration
//! beyond the grip limit is discarded (understeer) and feeds a decaying
//! lateral slide velocity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};

pub const KMH_PER_MS: f64 = 3.6;

/// Reference speed for braking calibration, m/s (80 km/h).
pub const CALIBRATION_SPEED: f64 = 80.0 / KMH_PER_MS;

/// Reported calibration error above which `calibrate` fails.
pub const CALIBRATION_TOLERANCE: f64 = 0.02;

const DRY_FRICTION: f64 = 0.8;
const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weather {
    Clear,
    Rainy,
    Snowy,
}

impl Weather {
    pub const ALL: [Weather; 3] = [Weather::Clear, Weather::Rainy, Weather::Snowy];

    /// Tire-road friction coefficient.
    pub fn friction_coefficient(self) -> f64 {
        match self {
            Weather::Clear => 0.8,
            Weather::Rainy => 0.4,
            Weather::Snowy => 0.28,
        }
    }

    /// Friction relative to dry road.
    pub fn grip_scale(self) -> f64 {
        match self {
            Weather::Clear => 1.0,
            Weather::Rainy => 0.5,
            Weather::Snowy => 0.35,
        }
    }

    /// Measured stopping distance from 80 km/h, meters.
    pub fn target_braking_distance(self) -> f64 {
        match self {
            Weather::Clear => 80.5,
            Weather::Rainy => 84.1,
            Weather::Snowy => 91.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Weather::Clear => "clear",
            Weather::Rainy => "rainy",
            Weather::Snowy => "snowy",
        }
    }

    pub fn letter(self) -> char {
        match self {
            Weather::Clear => 'C',
            Weather::Rainy => 'R',
            Weather::Snowy => 'S',
        }
    }
}

impl fmt::Display for Weather {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Weather {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clear" | "dry" | "c" => Ok(Weather::Clear),
            "rainy" | "rain" | "r" => Ok(Weather::Rainy),
            "snowy" | "snow" | "s" => Ok(Weather::Snowy),
            other => Err(Error::InvalidConfig(format!("unknown weather `{other}`"))),
        }
    }
}

/// Constant deceleration that stops a car from `speed` within `distance`.
pub fn closed_form_decel(speed: f64, distance: f64) -> f64 {
    speed * speed / (2.0 * distance)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrakeDecel {
    pub clear: f64,
    pub rainy: f64,
    pub snowy: f64,
}

impl BrakeDecel {
    pub fn get(&self, w: Weather) -> f64 {
        match w {
            Weather::Clear => self.clear,
            Weather::Rainy => self.rainy,
            Weather::Snowy => self.snowy,
        }
    }

    pub fn get_mut(&mut self, w: Weather) -> &mut f64 {
        match w {
            Weather::Clear => &mut self.clear,
            Weather::Rainy => &mut self.rainy,
            Weather::Snowy => &mut self.snowy,
        }
    }
}

impl Default for BrakeDecel {
    fn default() -> Self {
        let decel = |w: Weather| closed_form_decel(CALIBRATION_SPEED, w.target_braking_distance());
        Self {
            clear: decel(Weather::Clear),
            rainy: decel(Weather::Rainy),
            snowy: decel(Weather::Snowy),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub max_steer_angle: f64,
    pub max_engine_accel: f64,
    pub brake_decel: BrakeDecel,
    pub max_lateral_accel_dry: f64,
    pub top_speed: f64,
    pub drag_coeff: f64,
    /// Time constant of the lateral slide decay, seconds.
    pub slip_decay: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        let top_speed = 150.0 / KMH_PER_MS;
        let max_engine_accel = 4.0;
        Self {
            wheelbase: 2.8,
            max_steer_angle: 0.52,
            max_engine_accel,
            brake_decel: BrakeDecel::default(),
            max_lateral_accel_dry: DRY_FRICTION * GRAVITY,
            top_speed,
            // Full throttle balances drag exactly at top speed.
            drag_coeff: max_engine_accel / (top_speed * top_speed),
            slip_decay: 0.5,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wheelbase", self.wheelbase),
            ("max_steer_angle", self.max_steer_angle),
            ("max_engine_accel", self.max_engine_accel),
            ("max_lateral_accel_dry", self.max_lateral_accel_dry),
            ("top_speed", self.top_speed),
            ("slip_decay", self.slip_decay),
            ("brake_decel.clear", self.brake_decel.clear),
            ("brake_decel.rainy", self.brake_decel.rainy),
            ("brake_decel.snowy", self.brake_decel.snowy),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("vehicle.{name} must be positive, got {v}")));
            }
        }
        if !(self.drag_coeff.is_finite() && self.drag_coeff >= 0.0) {
            return Err(Error::InvalidConfig("vehicle.drag_coeff must be >= 0".into()));
        }
        let b = &self.brake_decel;
        if !(b.clear > b.rainy && b.rainy > b.snowy) {
            return Err(Error::InvalidConfig(
                "brake decelerations must decrease clear > rainy > snowy".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec2,
    pub heading: f64,
    /// Longitudinal body-frame speed, m/s, never negative.
    pub vx: f64,
    /// Lateral body-frame speed, m/s, left positive.
    pub vy: f64,
    pub yaw_rate: f64,
}

impl VehicleState {
    pub fn at_rest(position: Vec2, heading: f64) -> Self {
        Self {
            position,
            heading,
            vx: 0.0,
            vy: 0.0,
            yaw_rate: 0.0,
        }
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn speed_kmh(&self) -> f64 {
        self.speed() * KMH_PER_MS
    }

    /// Centripetal acceleration currently realized, m/s^2.
    pub fn lateral_accel(&self) -> f64 {
        self.yaw_rate * self.speed()
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.heading.is_finite()
            && self.vx.is_finite()
            && self.vy.is_finite()
            && self.yaw_rate.is_finite()
    }
}

/// Driver command; both channels live in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub steer: f64,
    /// Positive throttles, negative brakes.
    pub throttle_brake: f64,
}

impl Control {
    pub fn new(steer: f64, throttle_brake: f64) -> Self {
        Self {
            steer,
            throttle_brake,
        }
        .clamped()
    }

    /// Clamps both channels into [-1, 1]; NaN becomes 0.
    pub fn clamped(self) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        Self {
            steer: c(self.steer),
            throttle_brake: c(self.throttle_brake),
        }
    }

    pub fn from_action(action: [f64; 2]) -> Self {
        Self::new(action[0], action[1])
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.steer, self.throttle_brake]
    }
}

/// Advances the vehicle by `dt` seconds.
pub fn step(
    state: &VehicleState,
    control: Control,
    weather: Weather,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState> {
    debug_assert!(dt > 0.0 && dt <= 0.1, "dt out of range: {dt}");
    let u = control.clamped();
    let grip = weather.grip_scale();
    let speed = state.speed();

    let accel = if u.throttle_brake >= 0.0 {
        u.throttle_brake * params.max_engine_accel * grip - params.drag_coeff * speed * speed
    } else {
        u.throttle_brake * params.brake_decel.get(weather)
    };
    let new_speed = (speed + accel * dt).clamp(0.0, params.top_speed);

    // Displacement over the step for piecewise-constant acceleration; exact
    // when the car comes to rest mid-step.
    let travelled = if new_speed == 0.0 && accel < 0.0 {
        speed * speed / (2.0 * -accel)
    } else {
        0.5 * (speed + new_speed) * dt
    };

    let steer_angle = u.steer * params.max_steer_angle;
    let commanded = new_speed * new_speed * steer_angle.tan() / params.wheelbase;
    let limit = grip * params.max_lateral_accel_dry;
    let achieved = commanded.clamp(-limit, limit);
    let excess = commanded - achieved;
    let yaw_rate = if new_speed > 0.0 { achieved / new_speed } else { 0.0 };

    // Unrealized lateral acceleration pushes the body toward the outside of the turn.
    let decay = (-dt / params.slip_decay).exp();
    let vy = ((state.vy - excess * dt) * decay).clamp(-new_speed, new_speed);
    let vx = (new_speed * new_speed - vy * vy).max(0.0).sqrt();

    let heading = wrap_angle(state.heading + yaw_rate * dt);
    let body_dir = if new_speed > 0.0 {
        Vec2::new(vx, vy) * (1.0 / new_speed)
    } else if speed > 0.0 {
        Vec2::new(state.vx, state.vy) * (1.0 / speed)
    } else {
        Vec2::new(1.0, 0.0)
    };
    let (sin_h, cos_h) = heading.sin_cos();
    let world_dir = Vec2::new(
        cos_h * body_dir.x - sin_h * body_dir.y,
        sin_h * body_dir.x + cos_h * body_dir.y,
    );

    let next = VehicleState {
        position: state.position + world_dir * travelled,
        heading,
        vx,
        vy,
        yaw_rate,
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::NonFiniteState)
    }
}

/// Distance covered under full brake from `v0` until standstill.
pub fn braking_distance(v0: f64, weather: Weather, params: &VehicleParams, dt: f64) -> f64 {
    let mut state = VehicleState {
        vx: v0,
        ..VehicleState::at_rest(Vec2::ZERO, 0.0)
    };
    let brake = Control::new(0.0, -1.0);
    // Generous cap: an order of magnitude beyond the slowest plausible stop.
    let max_steps = (10.0 * v0 / (params.brake_decel.get(weather) * dt)).ceil() as usize + 10;
    for _ in 0..max_steps {
        if state.vx <= 0.0 {
            break;
        }
        match step(&state, brake, weather, params, dt) {
            Ok(next) => state = next,
            Err(_) => return f64::NAN,
        }
    }
    state.position.x
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub weather: Weather,
    pub friction: f64,
    pub grip_scale: f64,
    pub brake_decel: f64,
    pub closed_form_decel: f64,
    pub target_m: f64,
    pub simulated_m: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub speed_kmh: f64,
    pub dt: f64,
    pub rows: Vec<CalibrationRow>,
}

impl CalibrationReport {
    /// Simulates full-brake stops for every weather without judging them.
    pub fn measure(params: &VehicleParams, dt: f64) -> Self {
        let rows = Weather::ALL
            .into_iter()
            .map(|w| {
                let target = w.target_braking_distance();
                let simulated = braking_distance(CALIBRATION_SPEED, w, params, dt);
                CalibrationRow {
                    weather: w,
                    friction: w.friction_coefficient(),
                    grip_scale: w.grip_scale(),
                    brake_decel: params.brake_decel.get(w),
                    closed_form_decel: closed_form_decel(CALIBRATION_SPEED, target),
                    target_m: target,
                    simulated_m: simulated,
                    relative_error: (simulated - target).abs() / target,
                }
            })
            .collect();
        Self {
            speed_kmh: CALIBRATION_SPEED * KMH_PER_MS,
            dt,
            rows,
        }
    }

    pub fn max_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| if r.relative_error.is_nan() { f64::INFINITY } else { r.relative_error })
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() <= CALIBRATION_TOLERANCE
    }
}

impl fmt::Display for CalibrationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "braking calibration: full brake from {:.1} km/h, dt = {} s",
            self.speed_kmh, self.dt
        )?;
        writeln!(
            f,
            "{:<8}{:>7}{:>7}{:>12}{:>12}{:>10}{:>13}{:>9}",
            "weather", "mu", "grip", "decel_m/s2", "closed_form", "target_m", "simulated_m", "error_%"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<8}{:>7.2}{:>7.2}{:>12.4}{:>12.4}{:>10.1}{:>13.3}{:>9.3}",
                r.weather.name(),
                r.friction,
                r.grip_scale,
                r.brake_decel,
                r.closed_form_decel,
                r.target_m,
                r.simulated_m,
                100.0 * r.relative_error
            )?;
        }
        write!(
            f,
            "max error {:.3}% (limit {:.1}%): {}",
            100.0 * self.max_error(),
            100.0 * CALIBRATION_TOLERANCE,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Measures braking distances and fails if any misses its target by more than 2%.
pub fn calibrate(params: &VehicleParams, dt: f64) -> Result<CalibrationReport> {
    let report = CalibrationReport::measure(params, dt);
    if report.passed() {
        Ok(report)
    } else {
        Err(Error::CalibrationFailure(format!(
            "max braking-distance error {:.2}% exceeds {:.0}%",
            100.0 * report.max_error(),
            100.0 * CALIBRATION_TOLERANCE
        )))
    }
}
