//! Road geometry: centerlines built from line segments and circular arcs,
//! nearest-point projection into a track frame, and ray casts against the
//! road boundaries.
//!
//! Boundaries are the offset curves of the centerline at `±width / 2`. Every
//! arc radius exceeds half the width, so offset arcs never degenerate.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};

/// Road width shared by all tracks, meters.
pub const ROAD_WIDTH: f64 = 10.0;

/// How far outside the road a point may lie and still be projected.
pub const PROJECTION_MARGIN: f64 = 20.0;

const STRAIGHT_LENGTH: f64 = 1000.0;
const UTURN_LEG: f64 = 200.0;
const UTURN_RADIUS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackKind {
    Straight,
    UTurn,
    Circuit,
}

impl TrackKind {
    pub const ALL: [TrackKind; 3] = [TrackKind::Straight, TrackKind::UTurn, TrackKind::Circuit];

    pub fn name(self) -> &'static str {
        match self {
            TrackKind::Straight => "straight",
            TrackKind::UTurn => "uturn",
            TrackKind::Circuit => "circuit",
        }
    }
}

impl fmt::Display for TrackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "straight" => Ok(TrackKind::Straight),
            "uturn" | "u-turn" | "u_turn" => Ok(TrackKind::UTurn),
            "circuit" | "race-track" | "racetrack" => Ok(TrackKind::Circuit),
            other => Err(Error::InvalidConfig(format!("unknown track kind `{other}`"))),
        }
    }
}

/// One centerline piece. `s_start` is the cumulative arc length at its start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Line {
        start: Vec2,
        heading: f64,
        length: f64,
        s_start: f64,
    },
    /// Circular arc; `sweep` is signed, positive for a left turn.
    Arc {
        start: Vec2,
        heading: f64,
        radius: f64,
        sweep: f64,
        s_start: f64,
    },
}

/// Nearest point on one primitive.
#[derive(Debug, Clone, Copy)]
struct Nearest {
    distance: f64,
    s: f64,
    tangent: f64,
    signed_offset: f64,
}

impl Primitive {
    pub fn length(&self) -> f64 {
        match *self {
            Primitive::Line { length, .. } => length,
            Primitive::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    pub fn s_start(&self) -> f64 {
        match *self {
            Primitive::Line { s_start, .. } | Primitive::Arc { s_start, .. } => s_start,
        }
    }

    pub fn s_end(&self) -> f64 {
        self.s_start() + self.length()
    }

    /// Signed curvature, 1/m.
    pub fn curvature(&self) -> f64 {
        match *self {
            Primitive::Line { .. } => 0.0,
            Primitive::Arc { radius, sweep, .. } => sweep.signum() / radius,
        }
    }

    fn arc_center(start: Vec2, heading: f64, radius: f64, sweep: f64) -> Vec2 {
        start + Vec2::from_angle(heading).perp() * (sweep.signum() * radius)
    }

    /// Point at local arc length `t` from the primitive start.
    pub fn point_at(&self, t: f64) -> Vec2 {
        match *self {
            Primitive::Line { start, heading, .. } => start + Vec2::from_angle(heading) * t,
            Primitive::Arc {
                start,
                heading,
                radius,
                sweep,
                ..
            } => {
                let sign = sweep.signum();
                let center = Self::arc_center(start, heading, radius, sweep);
                let theta = heading + sign * t / radius;
                center + Vec2::new(theta.sin(), -theta.cos()) * (sign * radius)
            }
        }
    }

    pub fn heading_at(&self, t: f64) -> f64 {
        match *self {
            Primitive::Line { heading, .. } => heading,
            Primitive::Arc {
                heading,
                radius,
                sweep,
                ..
            } => heading + sweep.signum() * t / radius,
        }
    }

    fn nearest(&self, p: Vec2) -> Nearest {
        match *self {
            Primitive::Line {
                start,
                heading,
                length,
                s_start,
            } => {
                let dir = Vec2::from_angle(heading);
                let t = (p - start).dot(dir).clamp(0.0, length);
                let q = start + dir * t;
                let delta = p - q;
                let distance = delta.norm();
                let side = dir.cross(delta);
                Nearest {
                    distance,
                    s: s_start + t,
                    tangent: heading,
                    signed_offset: if side < 0.0 { -distance } else { distance },
                }
            }
            Primitive::Arc {
                start,
                heading,
                radius,
                sweep,
                s_start,
            } => {
                let sign = sweep.signum();
                let center = Self::arc_center(start, heading, radius, sweep);
                let v = p - center;
                let rho = v.norm();
                // Tangent heading of the circle point closest to p.
                let theta = v.angle() + sign * FRAC_PI_2;
                let swept = (sign * (theta - heading)).rem_euclid(TAU);
                let interior = rho > 0.0 && swept <= sweep.abs();
                let t = if interior {
                    radius * swept
                } else {
                    // Outside the angular span: the nearer endpoint wins, start on ties.
                    let end = self.point_at(self.length());
                    if (p - start).norm_sq() <= (p - end).norm_sq() {
                        0.0
                    } else {
                        self.length()
                    }
                };
                let q = self.point_at(t);
                let tangent = self.heading_at(t);
                let delta = p - q;
                let distance = delta.norm();
                let side = Vec2::from_angle(tangent).cross(delta);
                Nearest {
                    distance,
                    s: s_start + t,
                    tangent,
                    signed_offset: if side < 0.0 { -distance } else { distance },
                }
            }
        }
    }

    /// Smallest non-negative ray parameter at which the ray meets this
    /// primitive's boundary offset by `offset` (left positive).
    fn ray_hit(&self, origin: Vec2, dir: Vec2, offset: f64) -> Option<f64> {
        match *self {
            Primitive::Line {
                start,
                heading,
                length,
                ..
            } => {
                let t = Vec2::from_angle(heading);
                let p = start + t.perp() * offset;
                let denom = dir.cross(t);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let w = p - origin;
                let lambda = w.cross(t) / denom;
                let u = w.cross(dir) / denom;
                (lambda >= 0.0 && (-1e-12..=length + 1e-12).contains(&u)).then_some(lambda)
            }
            Primitive::Arc {
                start,
                heading,
                radius,
                sweep,
                ..
            } => {
                let sign = sweep.signum();
                let center = Self::arc_center(start, heading, radius, sweep);
                let r = radius - sign * offset;
                let f = origin - center;
                let b = dir.dot(f);
                let c = f.norm_sq() - r * r;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let root = disc.sqrt();
                [-b - root, -b + root]
                    .into_iter()
                    .filter(|&lambda| lambda >= 0.0)
                    .find(|&lambda| {
                        let q = origin + dir * lambda;
                        let theta = (q - center).angle() + sign * FRAC_PI_2;
                        let swept = (sign * (theta - heading)).rem_euclid(TAU);
                        swept <= sweep.abs() + 1e-12 || swept >= TAU - 1e-12
                    })
            }
        }
    }
}

/// Position of a point relative to the track centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    /// Arc-length position, meters.
    pub s: f64,
    /// Signed lateral offset, meters, left of the tangent positive.
    pub d: f64,
    /// Heading error against the centerline tangent, radians in (-pi, pi].
    pub beta: f64,
}

/// True iff the frame lies strictly outside the road; the edge itself counts as on-road.
pub fn is_off_road(frame: &TrackFrame, width: f64) -> bool {
    frame.d.abs() > width / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    kind: TrackKind,
    width: f64,
    primitives: Vec<Primitive>,
    closed: bool,
    total_length: f64,
}

/// Serialized form used by `drivelab track export`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackExport {
    pub schema_version: u32,
    pub kind: TrackKind,
    pub width: f64,
    pub closed: bool,
    pub total_length: f64,
    pub primitives: Vec<Primitive>,
}

struct Builder {
    pos: Vec2,
    heading: f64,
    s: f64,
    primitives: Vec<Primitive>,
}

impl Builder {
    fn new() -> Self {
        Self {
            pos: Vec2::ZERO,
            heading: 0.0,
            s: 0.0,
            primitives: Vec::new(),
        }
    }

    fn line(&mut self, length: f64) -> &mut Self {
        self.push(Primitive::Line {
            start: self.pos,
            heading: self.heading,
            length,
            s_start: self.s,
        })
    }

    fn arc(&mut self, radius: f64, sweep_deg: f64) -> &mut Self {
        self.push(Primitive::Arc {
            start: self.pos,
            heading: self.heading,
            radius,
            sweep: sweep_deg.to_radians(),
            s_start: self.s,
        })
    }

    fn push(&mut self, prim: Primitive) -> &mut Self {
        let len = prim.length();
        self.pos = prim.point_at(len);
        self.heading = prim.heading_at(len);
        self.s += len;
        self.primitives.push(prim);
        self
    }
}

/// Circuit layout parameterized by its first and closing straight lengths,
/// which `Track::build` solves for closure.
fn circuit_layout(first: f64, closing: f64) -> Builder {
    let mut b = Builder::new();
    b.line(first)
        .arc(60.0, 90.0)
        .line(200.0)
        .arc(40.0, 90.0)
        .line(120.0)
        .arc(30.0, -90.0)
        .line(80.0)
        .arc(30.0, 90.0)
        .line(150.0)
        .arc(80.0, 90.0)
        .line(closing)
        .arc(50.0, 90.0);
    b
}

impl Track {
    pub fn build(kind: TrackKind) -> Track {
        let (builder, closed) = match kind {
            TrackKind::Straight => {
                let mut b = Builder::new();
                b.line(STRAIGHT_LENGTH);
                (b, false)
            }
            TrackKind::UTurn => {
                let mut b = Builder::new();
                b.line(UTURN_LEG).arc(UTURN_RADIUS, 180.0).line(UTURN_LEG);
                (b, false)
            }
            TrackKind::Circuit => {
                // The first straight runs along +x and the closing one along -y,
                // so their lengths close the loop independently.
                let probe = circuit_layout(0.0, 0.0);
                let first = -probe.pos.x;
                let closing = probe.pos.y;
                (circuit_layout(first, closing), true)
            }
        };
        let total_length = builder.primitives.iter().map(Primitive::length).sum();
        Track {
            kind,
            width: ROAD_WIDTH,
            primitives: builder.primitives,
            closed,
            total_length,
        }
    }

    pub fn kind(&self) -> TrackKind {
        self.kind
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn start_point(&self) -> Vec2 {
        self.point_at(0.0)
    }

    pub fn end_point(&self) -> Vec2 {
        let last = self.primitives.last().expect("track has primitives");
        last.point_at(last.length())
    }

    fn primitive_at(&self, s: f64) -> (&Primitive, f64) {
        let s = self.normalize_s(s);
        let prim = self
            .primitives
            .iter()
            .find(|p| s < p.s_end())
            .unwrap_or_else(|| self.primitives.last().expect("track has primitives"));
        (prim, (s - prim.s_start()).clamp(0.0, prim.length()))
    }

    fn normalize_s(&self, s: f64) -> f64 {
        if self.closed {
            s.rem_euclid(self.total_length)
        } else {
            s.clamp(0.0, self.total_length)
        }
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        let (prim, t) = self.primitive_at(s);
        prim.point_at(t)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let (prim, t) = self.primitive_at(s);
        wrap_angle(prim.heading_at(t))
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        self.primitive_at(s).0.curvature()
    }

    /// Nearest-point projection of a pose onto the centerline.
    pub fn project(&self, position: Vec2, heading: f64) -> Result<TrackFrame> {
        let mut best: Option<Nearest> = None;
        for prim in &self.primitives {
            let cand = prim.nearest(position);
            // Strict improvement only, so the smallest s wins ties.
            if best.is_none_or(|b| cand.distance < b.distance - 1e-12) {
                best = Some(cand);
            }
        }
        let best = best.expect("track has primitives");
        let limit = self.width / 2.0 + PROJECTION_MARGIN;
        if !(best.distance <= limit) {
            return Err(Error::FarFromTrack {
                distance: best.distance,
                limit,
            });
        }
        let s = if self.closed && best.s >= self.total_length {
            best.s - self.total_length
        } else {
            best.s
        };
        Ok(TrackFrame {
            s,
            d: best.signed_offset,
            beta: wrap_angle(heading - best.tangent),
        })
    }

    /// True if an open track's finish line lies behind `position`.
    pub fn is_past_end(&self, position: Vec2) -> bool {
        if self.closed {
            return false;
        }
        let last = self.primitives.last().expect("track has primitives");
        let tangent = Vec2::from_angle(last.heading_at(last.length()));
        (position - self.end_point()).dot(tangent) > 0.0
    }

    /// Distance along `angle` from `origin` to the first road boundary, capped at `max_range`.
    pub fn ray_distance(&self, origin: Vec2, angle: f64, max_range: f64) -> Result<f64> {
        let frame = self.project(origin, angle)?;
        if is_off_road(&frame, self.width) {
            return Err(Error::OffRoadOrigin { offset: frame.d });
        }
        Ok(self.ray_distance_unchecked(origin, angle, max_range))
    }

    /// Ray cast without the on-road precondition; used for terminal observations.
    pub fn ray_distance_unchecked(&self, origin: Vec2, angle: f64, max_range: f64) -> f64 {
        let dir = Vec2::from_angle(angle);
        let half = self.width / 2.0;
        self.primitives
            .iter()
            .flat_map(|p| [p.ray_hit(origin, dir, half), p.ray_hit(origin, dir, -half)])
            .flatten()
            .fold(max_range, f64::min)
    }

    pub fn export(&self) -> TrackExport {
        TrackExport {
            schema_version: 1,
            kind: self.kind,
            width: self.width,
            closed: self.closed,
            total_length: self.total_length,
            primitives: self.primitives.clone(),
        }
    }
}

/// Largest tangent mismatch across consecutive primitive joints (and the
/// closing joint for loops), radians.
pub fn max_joint_heading_error(track: &Track) -> f64 {
    let prims = track.primitives();
    let mut pairs: Vec<(&Primitive, &Primitive)> = prims.windows(2).map(|w| (&w[0], &w[1])).collect();
    if track.is_closed() {
        pairs.push((&prims[prims.len() - 1], &prims[0]));
    }
    pairs
        .into_iter()
        .map(|(a, b)| wrap_angle(a.heading_at(a.length()) - b.heading_at(0.0)).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn straight() -> Track {
        Track::build(TrackKind::Straight)
    }

    #[test]
    fn straight_dimensions() {
        let t = straight();
        assert_eq!(t.total_length(), 1000.0);
        assert!(!t.is_closed());
        assert_eq!(t.width(), 10.0);
    }

    #[test]
    fn uturn_length_is_sum_of_pieces() {
        let t = Track::build(TrackKind::UTurn);
        let expected = 200.0 + std::f64::consts::PI * 30.0 + 200.0;
        assert!((t.total_length() - expected).abs() < 1e-9);
        assert!((t.total_length() - 494.248).abs() < 1e-3);
    }

    #[test]
    fn circuit_closes_and_meets_layout_rules() {
        let t = Track::build(TrackKind::Circuit);
        assert!(t.is_closed());
        assert!((t.end_point() - t.start_point()).norm() < 1e-6);
        assert!(t.primitives().len() >= 8);
        assert!((1500.0..=2500.0).contains(&t.total_length()));
        let mut left = false;
        let mut right = false;
        for (i, p) in t.primitives().iter().enumerate() {
            // Alternating straights and arcs.
            assert_eq!(matches!(p, Primitive::Line { .. }), i % 2 == 0);
            if let Primitive::Arc { radius, sweep, .. } = *p {
                assert!((25.0..=80.0).contains(&radius));
                left |= sweep > 0.0;
                right |= sweep < 0.0;
            }
            assert!(p.length() > 0.0);
        }
        assert!(left && right);
    }

    #[test]
    fn joints_are_g1_and_lengths_add_up() {
        for kind in TrackKind::ALL {
            let t = Track::build(kind);
            assert!(max_joint_heading_error(&t) < 1e-9, "{kind}");
            let sum: f64 = t.primitives().iter().map(Primitive::length).sum();
            assert!((sum - t.total_length()).abs() < 1e-9);
            for w in t.primitives().windows(2) {
                assert!(w[1].s_start() > w[0].s_start());
                assert!((w[0].s_end() - w[1].s_start()).abs() < 1e-9);
                let gap = (w[0].point_at(w[0].length()) - w[1].point_at(0.0)).norm();
                assert!(gap < 1e-9);
            }
        }
    }

    #[test]
    fn project_on_straight() {
        let f = straight().project(Vec2::new(12.3, 1.5), 0.2).unwrap();
        assert!((f.s - 12.3).abs() < 1e-12);
        assert!((f.d - 1.5).abs() < 1e-12);
        assert!((f.beta - 0.2).abs() < 1e-12);
    }

    #[test]
    fn project_identity_on_centerline() {
        for kind in TrackKind::ALL {
            let t = Track::build(kind);
            for i in 0..50 {
                let s = t.total_length() * i as f64 / 50.0;
                let f = t.project(t.point_at(s), t.heading_at(s)).unwrap();
                assert!(f.d.abs() < 1e-9, "{kind} s={s} d={}", f.d);
                assert!(f.beta.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn far_point_is_rejected() {
        let err = straight().project(Vec2::new(100.0, 30.0), 0.0).unwrap_err();
        assert!(matches!(err, Error::FarFromTrack { .. }));
    }

    #[test]
    fn off_road_is_strict() {
        let frame = |d| TrackFrame { s: 0.0, d, beta: 0.0 };
        assert!(is_off_road(&frame(5.01), 10.0));
        assert!(!is_off_road(&frame(-4.99), 10.0));
        assert!(!is_off_road(&frame(5.0), 10.0));
        assert!(is_off_road(&frame(-5.2), 10.0));
    }

    #[test]
    fn ray_on_straight() {
        let t = straight();
        let o = Vec2::new(100.0, 0.0);
        let perp = t.ray_distance(o, FRAC_PI_2, 200.0).unwrap();
        assert!((perp - 5.0).abs() < 1e-12);
        let slanted = t.ray_distance(o, 60f64.to_radians(), 200.0).unwrap();
        assert!((slanted - 5.0 / 60f64.to_radians().sin()).abs() < 1e-9);
        assert!((slanted - 5.7735).abs() < 1e-4);
        assert_eq!(t.ray_distance(o, 0.0, 200.0).unwrap(), 200.0);
    }

    #[test]
    fn ray_from_off_road_origin_fails() {
        let err = straight()
            .ray_distance(Vec2::new(10.0, 6.0), 0.0, 200.0)
            .unwrap_err();
        assert!(matches!(err, Error::OffRoadOrigin { .. }));
    }

    #[test]
    fn end_detection() {
        let t = straight();
        assert!(!t.is_past_end(Vec2::new(999.0, 0.0)));
        assert!(t.is_past_end(Vec2::new(1000.5, 2.0)));
        assert!(!Track::build(TrackKind::Circuit).is_past_end(Vec2::new(1e3, 0.0)));
    }

    #[test]
    fn export_roundtrips_through_json() {
        let t = Track::build(TrackKind::Circuit);
        let json = serde_json::to_string(&t.export()).unwrap();
        let back: TrackExport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.primitives, t.primitives().to_vec());
        assert_eq!(back.kind, TrackKind::Circuit);
    }

    proptest! {
        #[test]
        fn projection_idempotent(kind_idx in 0usize..3, frac in 0.0f64..1.0, d in -5.0f64..5.0) {
            let t = Track::build(TrackKind::ALL[kind_idx]);
            let s = frac * t.total_length();
            let n = Vec2::from_angle(t.heading_at(s)).perp();
            let p = t.point_at(s) + n * d;
            let f = t.project(p, 0.0).unwrap();
            let back = t.project(t.point_at(f.s), 0.0).unwrap();
            prop_assert!(back.d.abs() < 1e-9);
        }

        #[test]
        fn ray_symmetry_on_straight(theta in -3.1f64..3.1, x in 10.0f64..900.0) {
            let t = straight();
            let o = Vec2::new(x, 0.0);
            let a = t.ray_distance(o, theta, 200.0).unwrap();
            let b = t.ray_distance(o, -theta, 200.0).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn perpendicular_rays_span_the_width(kind_idx in 0usize..3, frac in 0.0f64..1.0, d in -4.99f64..4.99) {
            let t = Track::build(TrackKind::ALL[kind_idx]);
            let s = frac * t.total_length();
            let h = t.heading_at(s);
            let p = t.point_at(s) + Vec2::from_angle(h).perp() * d;
            let left = t.ray_distance(p, h + FRAC_PI_2, 200.0).unwrap();
            let right = t.ray_distance(p, h - FRAC_PI_2, 200.0).unwrap();
            prop_assert!((left + right - t.width()).abs() < 1e-6, "{} + {}", left, right);
        }
    }
}
