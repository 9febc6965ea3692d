//! Kinematic-bicycle racing on an oval with circular obstacles.
//!
//! State `(x, y, θ, v)`, input `(ω, a)` (front steering, throttle):
//!
//! ```text
//! x⁺ = x + v cos θ Δt
//! y⁺ = y + v sin θ Δt
//! θ⁺ = θ + (v / L) tan ω Δt
//! v⁺ = v + a cos θ Δt
//! ```
//!
//! The throttle term keeps the `cos θ` factor exactly as stated for this
//! benchmark. The track is a stadium (two straights joined by semicircles)
//! driven counter-clockwise; the raceline is its centerline with a trapezoidal
//! speed profile.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mpc::{Environment, Observation};
use crate::problem::{Dims, InputBounds, Model, ProblemSpec, Weights};
use crate::seeding::{stream_rng, Stream};

pub const STATE_DIM: usize = 4;
pub const INPUT_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BicycleParams {
    pub wheelbase: f64,
    pub dt: f64,
    pub max_steer_deg: f64,
    pub max_accel: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        BicycleParams {
            wheelbase: 0.33,
            dt: 0.025,
            max_steer_deg: 35.0,
            max_accel: 8.0,
        }
    }
}

impl BicycleParams {
    pub fn bounds(&self) -> Result<InputBounds> {
        InputBounds::symmetric(&[self.max_steer_deg.to_radians(), self.max_accel])
    }
}

pub fn bicycle_step(state: &[f64], input: &[f64], params: &BicycleParams, next: &mut [f64]) {
    let (x, y, theta, v) = (state[0], state[1], state[2], state[3]);
    let (steer, accel) = (input[0], input[1]);
    let (sin, cos) = theta.sin_cos();
    let dt = params.dt;
    next[0] = x + v * cos * dt;
    next[1] = y + v * sin * dt;
    next[2] = theta + v / params.wheelbase * steer.tan() * dt;
    next[3] = v + accel * cos * dt;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

/// `g_j(p) = (r_j + ε) − ‖p − o_j‖`; negative means clear of the inflated disk.
pub fn obstacle_constraints(p: [f64; 2], obstacles: &[Obstacle], margin: f64, out: &mut [f64]) {
    for (o, g) in obstacles.iter().zip(out.iter_mut()) {
        let d = ((p[0] - o.center[0]).powi(2) + (p[1] - o.center[1]).powi(2)).sqrt();
        *g = o.radius + margin - d;
    }
}

/// Track geometry, raceline speeds and obstacle sampling ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackParams {
    pub straight_length: f64,
    pub turn_radius: f64,
    pub half_width: f64,
    pub straight_speed: f64,
    pub corner_speed: f64,
    /// Length over which the target speed ramps between straight and corner values.
    pub ramp_length: f64,
    pub obstacle_count: usize,
    pub obstacle_radius_min: f64,
    pub obstacle_radius_max: f64,
    /// Safety margin `ε_obs`.
    pub safety_margin: f64,
    pub lateral_offset_min: f64,
    pub lateral_offset_max: f64,
    pub vehicle_width: f64,
    /// Arclength kept obstacle-free on both sides of the start line.
    pub start_clearance: f64,
    pub raceline_spacing: f64,
    pub max_retries: usize,
}

impl Default for TrackParams {
    fn default() -> Self {
        TrackParams {
            straight_length: 20.0,
            turn_radius: 8.0,
            half_width: 1.5,
            straight_speed: 8.0,
            corner_speed: 6.0,
            ramp_length: 5.0,
            obstacle_count: 25,
            obstacle_radius_min: 0.15,
            obstacle_radius_max: 0.3,
            safety_margin: 0.2,
            lateral_offset_min: 0.2,
            lateral_offset_max: 1.0,
            vehicle_width: 0.3,
            start_clearance: 4.0,
            raceline_spacing: 0.25,
            max_retries: 10_000,
        }
    }
}

impl TrackParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("straight_length", self.straight_length),
            ("turn_radius", self.turn_radius),
            ("half_width", self.half_width),
            ("straight_speed", self.straight_speed),
            ("corner_speed", self.corner_speed),
            ("ramp_length", self.ramp_length),
            ("obstacle_radius_min", self.obstacle_radius_min),
            ("vehicle_width", self.vehicle_width),
            ("raceline_spacing", self.raceline_spacing),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be positive"));
            }
        }
        if self.obstacle_radius_max < self.obstacle_radius_min {
            return Err(Error::param("obstacle_radius_max", "must be at least obstacle_radius_min"));
        }
        if !(self.safety_margin >= 0.0) {
            return Err(Error::param("safety_margin", "must be nonnegative"));
        }
        if !(0.0 <= self.lateral_offset_min && self.lateral_offset_min <= self.lateral_offset_max) {
            return Err(Error::param("lateral_offset_min", "need 0 <= min <= max"));
        }
        if self.turn_radius <= self.half_width {
            return Err(Error::param("turn_radius", "must exceed half_width"));
        }
        if 2.0 * self.start_clearance >= self.oval().length() {
            return Err(Error::param("start_clearance", "leaves no room for obstacles"));
        }
        Ok(())
    }

    pub fn oval(&self) -> Oval {
        Oval {
            half_straight: self.straight_length / 2.0,
            radius: self.turn_radius,
        }
    }

    /// Trapezoidal target speed: corner speed on the arcs, ramping to the
    /// straight speed over `ramp_length` of straight.
    pub fn target_speed(&self, s: f64) -> f64 {
        let d = self.oval().distance_to_corner(s);
        let w = (d / self.ramp_length).min(1.0);
        self.corner_speed + (self.straight_speed - self.corner_speed) * w
    }
}

/// Stadium centerline parameterized by arclength, starting at the middle of
/// the lower straight and heading in `+x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Oval {
    pub half_straight: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub s: f64,
    /// Signed offset, positive to the left of the travel direction.
    pub lateral: f64,
}

impl Oval {
    pub fn length(&self) -> f64 {
        4.0 * self.half_straight + TAU * self.radius
    }

    fn wrap(&self, s: f64) -> f64 {
        s.rem_euclid(self.length())
    }

    /// Position and heading (in `[0, 2π)`) at arclength `s`.
    pub fn pose(&self, s: f64) -> ([f64; 2], f64) {
        let (a, r) = (self.half_straight, self.radius);
        let s = self.wrap(s);
        let arc = PI * r;
        if s < a {
            ([s, -r], 0.0)
        } else if s < a + arc {
            let phi = -PI / 2.0 + (s - a) / r;
            ([a + r * phi.cos(), r * phi.sin()], phi + PI / 2.0)
        } else if s < 3.0 * a + arc {
            ([a - (s - a - arc), r], PI)
        } else if s < 3.0 * a + 2.0 * arc {
            let phi = PI / 2.0 + (s - 3.0 * a - arc) / r;
            ([-a + r * phi.cos(), r * phi.sin()], phi + PI / 2.0)
        } else {
            ([-a + (s - 3.0 * a - 2.0 * arc), -r], 0.0)
        }
    }

    pub fn left_normal(&self, s: f64) -> [f64; 2] {
        let (_, h) = self.pose(s);
        [-h.sin(), h.cos()]
    }

    pub fn project(&self, p: [f64; 2]) -> Projection {
        let (a, r) = (self.half_straight, self.radius);
        let len = self.length();
        let arc = PI * r;
        if p[0] > a {
            let phi = p[1].atan2(p[0] - a);
            let dist = (p[1].powi(2) + (p[0] - a).powi(2)).sqrt();
            Projection {
                s: a + r * (phi + PI / 2.0),
                lateral: r - dist,
            }
        } else if p[0] < -a {
            let mut phi = p[1].atan2(p[0] + a);
            if phi < 0.0 {
                phi += TAU;
            }
            let dist = (p[1].powi(2) + (p[0] + a).powi(2)).sqrt();
            Projection {
                s: 3.0 * a + arc + r * (phi - PI / 2.0),
                lateral: r - dist,
            }
        } else if p[1] < 0.0 {
            Projection {
                s: if p[0] >= 0.0 { p[0] } else { len + p[0] },
                lateral: p[1] + r,
            }
        } else {
            Projection {
                s: a + arc + (a - p[0]),
                lateral: r - p[1],
            }
        }
    }

    /// Arclength distance from `s` to the nearest arc; zero on an arc.
    pub fn distance_to_corner(&self, s: f64) -> f64 {
        let (a, arc) = (self.half_straight, PI * self.radius);
        let s = self.wrap(s);
        let corners = [(a, a + arc), (3.0 * a + arc, 3.0 * a + 2.0 * arc)];
        let len = self.length();
        corners
            .iter()
            .map(|&(lo, hi)| {
                if s >= lo && s <= hi {
                    0.0
                } else {
                    let d1 = (lo - s).rem_euclid(len);
                    let d2 = (s - hi).rem_euclid(len);
                    d1.min(d2)
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RacelineSample {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

pub const ENVIRONMENT_FORMAT: &str = "admm-eki/race-environment";
pub const ENVIRONMENT_VERSION: u32 = 1;

/// Immutable racing scenario; serializes to a versioned JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaceEnvironment {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub track: TrackParams,
    pub vehicle: BicycleParams,
    pub horizon: usize,
    pub obstacles: Vec<Obstacle>,
    pub raceline: Vec<RacelineSample>,
}

/// Samples obstacles slot by slot along the raceline, rejecting placements
/// that close the track, overlap an earlier obstacle, or crowd the start pose.
pub fn build_race_environment(
    seed: u64,
    track: &TrackParams,
    vehicle: &BicycleParams,
    horizon: usize,
) -> Result<RaceEnvironment> {
    track.validate()?;
    if horizon == 0 {
        return Err(Error::param("horizon", "must be positive"));
    }
    let oval = track.oval();
    let len = oval.length();
    let mut rng = stream_rng(seed, Stream::Environment);
    let usable = len - 2.0 * track.start_clearance;
    let slot = usable / track.obstacle_count.max(1) as f64;
    let (start, _) = oval.pose(0.0);
    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(track.obstacle_count);

    for i in 0..track.obstacle_count {
        let mut placed = None;
        for _ in 0..track.max_retries {
            let s = track.start_clearance + slot * (i as f64 + rng.random_range(0.15..0.85));
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let lateral = side * rng.random_range(track.lateral_offset_min..=track.lateral_offset_max);
            let radius = rng.random_range(track.obstacle_radius_min..=track.obstacle_radius_max);
            let (p, _) = oval.pose(s);
            let nrm = oval.left_normal(s);
            let cand = Obstacle {
                center: [p[0] + lateral * nrm[0], p[1] + lateral * nrm[1]],
                radius,
            };
            if leaves_corridor(&cand, lateral, track)
                && dist(cand.center, start) >= cand.radius + track.safety_margin + track.start_clearance / 2.0
                && obstacles.iter().all(|o| {
                    dist(o.center, cand.center)
                        >= o.radius + cand.radius + 2.0 * track.safety_margin + track.vehicle_width
                })
            {
                placed = Some(cand);
                break;
            }
        }
        obstacles.push(placed.ok_or_else(|| {
            Error::Environment(format!("could not place obstacle {i} within {} retries", track.max_retries))
        })?);
    }

    let n_samples = (len / track.raceline_spacing).round() as usize;
    let raceline = (0..n_samples)
        .map(|k| {
            let s = k as f64 * len / n_samples as f64;
            let (p, heading) = oval.pose(s);
            RacelineSample {
                s,
                x: p[0],
                y: p[1],
                heading,
                speed: track.target_speed(s),
            }
        })
        .collect();

    Ok(RaceEnvironment {
        format: ENVIRONMENT_FORMAT.to_string(),
        version: ENVIRONMENT_VERSION,
        seed,
        track: track.clone(),
        vehicle: *vehicle,
        horizon,
        obstacles,
        raceline,
    })
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Free width on the wider side of an inflated obstacle, within the track edges.
pub fn corridor_width(lateral: f64, radius: f64, track: &TrackParams) -> f64 {
    let inflated = radius + track.safety_margin;
    let left = track.half_width - (lateral + inflated);
    let right = (lateral - inflated) + track.half_width;
    left.max(right)
}

fn leaves_corridor(o: &Obstacle, lateral: f64, track: &TrackParams) -> bool {
    corridor_width(lateral, o.radius, track) >= track.vehicle_width
}

/// Per-stage cost weights for the racing planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RacingCost {
    /// Diagonal of `R` over `(x, y, θ, v)`.
    pub state: [f64; 4],
    /// Diagonal of `R_H`.
    pub terminal: [f64; 4],
    /// Diagonal of `Q` over `(ω, a)`.
    pub input: [f64; 2],
}

impl Default for RacingCost {
    fn default() -> Self {
        RacingCost {
            state: [20.0, 20.0, 1.0, 1.0],
            terminal: [20.0, 20.0, 1.0, 1.0],
            input: [0.1, 0.01],
        }
    }
}

/// Bicycle dynamics with one obstacle constraint per obstacle and stage.
#[derive(Debug, Clone)]
pub struct RacingModel {
    pub vehicle: BicycleParams,
    pub obstacles: Vec<Obstacle>,
    pub margin: f64,
}

impl Model for RacingModel {
    fn step(&self, state: &[f64], input: &[f64], next: &mut [f64]) {
        bicycle_step(state, input, &self.vehicle, next)
    }

    /// Evaluated at the successor state so that stage `t` constrains `p_{t+1}`;
    /// the current position cannot be influenced by any input.
    fn constraints(&self, state: &[f64], input: &[f64], out: &mut [f64]) {
        let mut next = [0.0; STATE_DIM];
        bicycle_step(state, input, &self.vehicle, &mut next);
        obstacle_constraints([next[0], next[1]], &self.obstacles, self.margin, out)
    }
}

impl RaceEnvironment {
    pub fn oval(&self) -> Oval {
        self.track.oval()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("environment serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: RaceEnvironment =
            serde_json::from_str(text).map_err(|e| Error::Environment(e.to_string()))?;
        if env.format != ENVIRONMENT_FORMAT || env.version != ENVIRONMENT_VERSION {
            return Err(Error::Environment(format!(
                "unsupported environment file {} v{}",
                env.format, env.version
            )));
        }
        Ok(env)
    }

    /// SHA-256 of the compact JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("environment serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn initial_state(&self, speed: f64) -> Vec<f64> {
        let (p, h) = self.oval().pose(0.0);
        vec![p[0], p[1], h, speed]
    }

    pub fn model(&self) -> RacingModel {
        RacingModel {
            vehicle: self.vehicle,
            obstacles: self.obstacles.clone(),
            margin: self.track.safety_margin,
        }
    }

    /// Planner problem with a placeholder reference; the episode loop installs
    /// a fresh reference window every step.
    pub fn problem_spec(&self, cost: &RacingCost) -> Result<ProblemSpec> {
        let dims = Dims::new(STATE_DIM, INPUT_DIM, self.obstacles.len(), self.horizon);
        ProblemSpec::new(
            dims,
            Arc::new(self.model()),
            Weights::diagonal(&cost.state, &cost.terminal, &cost.input),
            self.reference_window(&self.initial_state(0.0)),
        )?
        .with_bounds(self.vehicle.bounds()?)
    }

    /// `H + 1` reference states starting at the first raceline sample at or
    /// ahead of the vehicle, advancing along the raceline at the target speed.
    /// Headings are unwrapped to stay continuous with the vehicle heading.
    pub fn reference_window(&self, state: &[f64]) -> Vec<f64> {
        let oval = self.oval();
        let len = oval.length();
        let ds = len / self.raceline.len() as f64;
        let proj = oval.project([state[0], state[1]]);
        let mut s = (proj.s / ds).ceil() * ds;
        let mut out = Vec::with_capacity((self.horizon + 1) * STATE_DIM);
        let mut prev_heading = state[2];
        for _ in 0..=self.horizon {
            let (p, h) = oval.pose(s);
            let heading = h + TAU * ((prev_heading - h) / TAU).round();
            let v = self.track.target_speed(s);
            out.extend_from_slice(&[p[0], p[1], heading, v]);
            prev_heading = heading;
            s += v * self.vehicle.dt;
        }
        out
    }

    /// Distance from the vehicle to the nearest obstacle surface (no margin).
    pub fn clearance(&self, p: [f64; 2]) -> f64 {
        self.obstacles
            .iter()
            .map(|o| dist(p, o.center) - o.radius)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn tracking_error(&self, p: [f64; 2]) -> f64 {
        self.oval().project(p).lateral.abs()
    }
}

/// Episode wrapper: true plant plus lap bookkeeping.
///
/// The lap is complete once the vehicle crosses the start line moving forward
/// after covering at least 90 % of the track length.
#[derive(Debug, Clone)]
pub struct RaceSim {
    pub env: Arc<RaceEnvironment>,
    pub initial_speed: f64,
    last_s: f64,
    covered: f64,
    complete: bool,
}

pub const LAP_FRACTION: f64 = 0.9;

impl RaceSim {
    pub fn new(env: Arc<RaceEnvironment>, initial_speed: f64) -> Self {
        RaceSim {
            env,
            initial_speed,
            last_s: 0.0,
            covered: 0.0,
            complete: false,
        }
    }

    pub fn covered(&self) -> f64 {
        self.covered
    }
}

impl Environment for RaceSim {
    fn initial_state(&self) -> Vec<f64> {
        self.env.initial_state(self.initial_speed)
    }

    fn reset(&mut self) {
        self.last_s = self.env.oval().project({
            let x = self.initial_state();
            [x[0], x[1]]
        }).s;
        self.covered = 0.0;
        self.complete = false;
    }

    fn reference(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.env.reference_window(state))
    }

    fn advance(&mut self, state: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        let mut u = input.to_vec();
        self.env.vehicle.bounds()?.clamp(&mut u);
        let mut next = vec![0.0; STATE_DIM];
        bicycle_step(state, &u, &self.env.vehicle, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDiverged { stage: 1 });
        }
        let oval = self.env.oval();
        let len = oval.length();
        let s = oval.project([next[0], next[1]]).s;
        let mut ds = s - self.last_s;
        let mut crossed = false;
        if ds < -len / 2.0 {
            ds += len;
            crossed = true;
        } else if ds > len / 2.0 {
            ds -= len;
        }
        self.covered += ds;
        self.last_s = s;
        if crossed && self.covered >= LAP_FRACTION * len {
            self.complete = true;
        }
        Ok(next)
    }

    fn observe(&self, state: &[f64]) -> Observation {
        let p = [state[0], state[1]];
        Observation {
            speed: state[3],
            tracking_error: self.env.tracking_error(p),
            clearance: self.env.clearance(p),
        }
    }

    fn is_complete(&self, _state: &[f64]) -> bool {
        self.complete
    }

    /// An episode ends on the first contact with an obstacle.
    fn is_terminal(&self, state: &[f64]) -> bool {
        self.env.clearance([state[0], state[1]]) < 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(state: [f64; 4], input: [f64; 2]) -> [f64; 4] {
        let mut n = [0.0; 4];
        bicycle_step(&state, &input, &BicycleParams::default(), &mut n);
        n
    }

    #[test]
    fn rest_state_is_fixed() {
        let s = [1.0, -2.0, 0.7, 0.0];
        assert_eq!(step(s, [0.3, 0.0]), s);
    }

    #[test]
    fn straight_line_step() {
        let n = step([0.0, 0.0, 0.0, 1.0], [0.0, 0.0]);
        assert_eq!(n, [0.025, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn throttle_step() {
        let n = step([0.0, 0.0, 0.0, 0.0], [0.0, 2.0]);
        assert!((n[3] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn speed_constant_without_throttle() {
        let mut s = [0.0, 0.0, 0.3, 4.0];
        for k in 0..200 {
            s = step(s, [0.2 * (k as f64 * 0.1).sin(), 0.0]);
            assert_eq!(s[3], 4.0);
        }
    }

    #[test]
    fn obstacle_constraint_values() {
        let obs = [Obstacle {
            center: [1.0, 2.0],
            radius: 0.5,
        }];
        let mut g = [0.0];
        obstacle_constraints([1.0, 2.0], &obs, 0.2, &mut g);
        assert!((g[0] - 0.7).abs() < 1e-15);
        obstacle_constraints([1.7, 2.0], &obs, 0.2, &mut g);
        assert!(g[0].abs() < 1e-15);
        obstacle_constraints([1.0, 3.7], &obs, 0.2, &mut g);
        assert!((g[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn oval_pose_projection_round_trip() {
        let oval = TrackParams::default().oval();
        let len = oval.length();
        for k in 0..400 {
            let s = k as f64 * len / 400.0;
            let (p, h) = oval.pose(s);
            let n = oval.left_normal(s);
            for lat in [-0.8, 0.0, 0.6] {
                let q = [p[0] + lat * n[0], p[1] + lat * n[1]];
                let pr = oval.project(q);
                let ds = (pr.s - s).abs().min(len - (pr.s - s).abs());
                assert!(ds < 1e-9, "s {s} -> {}", pr.s);
                assert!((pr.lateral - lat).abs() < 1e-9);
            }
            assert!((0.0..TAU).contains(&h));
        }
    }

    #[test]
    fn oval_is_continuous() {
        let oval = TrackParams::default().oval();
        let len = oval.length();
        let n = 5000;
        for k in 0..n {
            let (a, _) = oval.pose(k as f64 * len / n as f64);
            let (b, _) = oval.pose((k + 1) as f64 * len / n as f64);
            assert!(dist(a, b) <= len / n as f64 + 1e-9);
        }
    }

    #[test]
    fn speed_profile_is_trapezoidal() {
        let t = TrackParams::default();
        let oval = t.oval();
        assert_eq!(t.target_speed(0.0), t.straight_speed);
        assert_eq!(t.target_speed(oval.half_straight + 1.0), t.corner_speed);
        let mid_ramp = t.target_speed(oval.half_straight - t.ramp_length / 2.0);
        assert!((mid_ramp - 0.5 * (t.straight_speed + t.corner_speed)).abs() < 1e-12);
    }

    #[test]
    fn environment_is_seeded() {
        let t = TrackParams::default();
        let a = build_race_environment(3, &t, &BicycleParams::default(), 20).unwrap();
        let b = build_race_environment(3, &t, &BicycleParams::default(), 20).unwrap();
        let c = build_race_environment(4, &t, &BicycleParams::default(), 20).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.obstacles.len(), 25);
    }

    #[test]
    fn obstacles_leave_a_corridor() {
        // Geometric oracle: project every obstacle back onto the centerline and
        // measure the free width on either side within the track edges.
        let t = TrackParams::default();
        for seed in 0..20 {
            let env = build_race_environment(seed, &t, &BicycleParams::default(), 20).unwrap();
            let oval = env.oval();
            for o in &env.obstacles {
                let pr = oval.project(o.center);
                let inflated = o.radius + t.safety_margin;
                let left = t.half_width - pr.lateral - inflated;
                let right = pr.lateral - inflated + t.half_width;
                assert!(left.max(right) >= t.vehicle_width, "seed {seed}: {o:?}");
            }
            let start = env.initial_state(0.0);
            assert!(env.clearance([start[0], start[1]]) > t.safety_margin);
        }
    }

    #[test]
    fn environment_json_round_trip() {
        let env = build_race_environment(1, &TrackParams::default(), &BicycleParams::default(), 20).unwrap();
        let back = RaceEnvironment::from_json(&env.to_json()).unwrap();
        assert_eq!(back.hash(), env.hash());
        let bad = env.to_json().replace("\"version\": 1", "\"version\": 9");
        assert!(RaceEnvironment::from_json(&bad).is_err());
    }

    #[test]
    fn impossible_placement_reports_error() {
        let t = TrackParams {
            half_width: 0.5,
            lateral_offset_min: 0.0,
            lateral_offset_max: 0.0,
            obstacle_radius_min: 0.4,
            obstacle_radius_max: 0.4,
            max_retries: 50,
            ..TrackParams::default()
        };
        assert!(matches!(
            build_race_environment(0, &t, &BicycleParams::default(), 20),
            Err(Error::Environment(_))
        ));
    }

    #[test]
    fn reference_window_shape_and_heading_continuity() {
        let env = build_race_environment(0, &TrackParams::default(), &BicycleParams::default(), 20).unwrap();
        // Vehicle heading already wound once around.
        let state = [env.oval().half_straight + 3.0, -5.0, TAU + 0.4, 6.0];
        let z = env.reference_window(&state);
        assert_eq!(z.len(), 21 * 4);
        for t in 0..20 {
            assert!((z[(t + 1) * 4 + 2] - z[t * 4 + 2]).abs() < 0.5);
        }
        assert!((z[2] - state[2]).abs() < PI);
    }

    #[test]
    fn lap_bookkeeping() {
        let env = Arc::new(build_race_environment(0, &TrackParams::default(), &BicycleParams::default(), 20).unwrap());
        let mut sim = RaceSim::new(env.clone(), 0.0);
        sim.reset();
        let oval = env.oval();
        let len = oval.length();
        // Teleport along the centerline by feeding states through `advance` with zero speed.
        let mut s = 0.0;
        while !sim.is_complete(&[]) {
            s += 0.5;
            let (p, h) = oval.pose(s);
            sim.advance(&[p[0], p[1], h, 0.0], &[0.0, 0.0]).unwrap();
            assert!(s < len + 1.0, "lap never completed");
        }
        assert!(sim.covered() >= LAP_FRACTION * len);
    }
}
