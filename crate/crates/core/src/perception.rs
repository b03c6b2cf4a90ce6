//! The 23-entry observation: 19 boundary rays, heading error, lateral
//! position and body-frame velocities.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::track::{is_off_road, Track, TrackFrame};
use crate::vehicle::{VehicleParams, VehicleState};

pub const N_RAYS: usize = 19;
pub const OBS_DIM: usize = N_RAYS + 4;

pub const BETA_INDEX: usize = N_RAYS;
pub const TR_POS_INDEX: usize = N_RAYS + 1;
pub const VX_INDEX: usize = N_RAYS + 2;
pub const VY_INDEX: usize = N_RAYS + 3;

/// Column names in observation order; the single source of truth for logs.
pub fn observation_columns() -> Vec<String> {
    let mut cols: Vec<String> = ray_angles_deg()
        .iter()
        .map(|a| {
            if *a < 0 {
                format!("ray_m{}", -a)
            } else {
                format!("ray_p{a}")
            }
        })
        .collect();
    cols.extend(["beta", "tr_pos_norm", "vx_norm", "vy_norm"].map(String::from));
    cols
}

/// Ray angles relative to the heading, degrees, rightmost first.
pub fn ray_angles_deg() -> [i32; N_RAYS] {
    std::array::from_fn(|i| -90 + 10 * i as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaySensorConfig {
    pub max_range: f64,
}

impl Default for RaySensorConfig {
    fn default() -> Self {
        Self { max_range: 200.0 }
    }
}

impl RaySensorConfig {
    pub fn angles_rad(&self) -> [f64; N_RAYS] {
        ray_angles_deg().map(|a| (a as f64).to_radians())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn rays(&self) -> &[f64] {
        &self.0[..N_RAYS]
    }

    pub fn beta(&self) -> f64 {
        self.0[BETA_INDEX]
    }

    pub fn tr_pos_norm(&self) -> f64 {
        self.0[TR_POS_INDEX]
    }

    pub fn vx_norm(&self) -> f64 {
        self.0[VX_INDEX]
    }

    pub fn vy_norm(&self) -> f64 {
        self.0[VY_INDEX]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Observation plus the track frame it was computed from.
#[derive(Debug, Clone, Copy)]
pub struct Sensed {
    pub observation: Observation,
    pub frame: TrackFrame,
    /// Set when the vehicle is outside the road; the observation is still valid.
    pub off_road: bool,
}

pub fn sense(
    track: &Track,
    state: &VehicleState,
    cfg: &RaySensorConfig,
    params: &VehicleParams,
) -> Result<Sensed> {
    let frame = track.project(state.position, state.heading)?;
    Ok(sense_with_frame(track, state, frame, cfg, params))
}

pub(crate) fn sense_with_frame(
    track: &Track,
    state: &VehicleState,
    frame: TrackFrame,
    cfg: &RaySensorConfig,
    params: &VehicleParams,
) -> Sensed {
    let mut obs = [0.0; OBS_DIM];
    for (slot, rel) in obs.iter_mut().zip(cfg.angles_rad()) {
        let dist = track.ray_distance_unchecked(state.position, state.heading + rel, cfg.max_range);
        *slot = (dist / cfg.max_range).clamp(0.0, 1.0);
    }
    obs[BETA_INDEX] = frame.beta;
    obs[TR_POS_INDEX] = frame.d / (track.width() / 2.0);
    obs[VX_INDEX] = state.vx / params.top_speed;
    obs[VY_INDEX] = state.vy / params.top_speed;
    Sensed {
        observation: Observation(obs),
        frame,
        off_road: is_off_road(&frame, track.width()),
    }
}
