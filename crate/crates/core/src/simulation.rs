//! Scripted scenarios standing in for the obstacle sensor and the eye
//! tracker.
//!
//! A scenario is a JSON document. Actor waypoints live in a ground-fixed
//! world frame whose axes coincide with the vehicle frame at t = 0; the ego
//! drives along +x, so a world point `p` sits at `p - (x_ego, 0, 0)` in the
//! vehicle frame. Velocities are ground-relative.
//!
//! ```json
//! {
//!   "name": "demo", "duration": 10.0, "tick_rate": 20.0, "gaze_rate": 60.0, "seed": 1,
//!   "ego": {"speed_profile": [[0.0, 10.0], [5.0, 4.0]], "yaw_rate": 0.0},
//!   "actors": [{"id": "ped-1", "class": "pedestrian", "half_extents": [0.3, 0.3, 0.9],
//!               "start_time": 1.0,
//!               "waypoints": [{"pos": [50, -6, 0.9], "speed": 1.4}, {"pos": [50, 6, 0.9]}]}],
//!   "gaze": {"mode": "scripted", "origin_m": [-0.8, 0.4, 1.2],
//!            "keyframes": [{"t": 0.0, "dir": [1, 0, -0.05]}, {"t": 3.0, "look_at": "ped-1"}],
//!            "blinks": [[2.0, 2.15]]},
//!   "noise": {"position_sigma": 0.05, "velocity_sigma": 0.03, "gaze_sigma_rad": 0.003},
//!   "sensor": {"max_range": 120.0, "half_fov_deg": 60.0},
//!   "calibration_truth": {"rotation": [[1,0,0],[0,1,0],[0,0,1]], "translation": [0,0,0]},
//!   "scene_camera": {"intrinsics": {...}, "pose_m_to_s": {...}}
//! }
//! ```

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::GazeSample;
use crate::geometry::{perturb_direction, Ray, RigidTransform, Vec3};
use crate::perception::{EgoState, ObstacleClass, ObstacleTrack};
use crate::replay::{gaze_at, FrameRecord, DEFAULT_MAX_SKEW};
use crate::restitution::SceneCamera;

const STREAM_OBSTACLES: u64 = 1;
const STREAM_GAZE: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("scenario: {0}")]
    Parse(String),
    #[error("unknown bundled scenario {0:?}")]
    Unknown(String),
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoScript {
    /// `[t, speed]` knots, linearly interpolated and held at both ends.
    pub speed_profile: Vec<[f64; 2]>,
    #[serde(default)]
    pub yaw_rate: f64,
}

impl EgoScript {
    pub fn speed_at(&self, t: f64) -> f64 {
        let p = &self.speed_profile;
        if t <= p[0][0] {
            return p[0][1];
        }
        for w in p.windows(2) {
            let ([t0, v0], [t1, v1]) = (w[0], w[1]);
            if t <= t1 {
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        p[p.len() - 1][1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub pos: [f64; 3],
    /// Speed on the segment leaving this waypoint (m/s).
    #[serde(default)]
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorScript {
    pub id: String,
    pub class: ObstacleClass,
    pub half_extents: [f64; 3],
    #[serde(default)]
    pub start_time: f64,
    pub waypoints: Vec<Waypoint>,
}

impl ActorScript {
    /// World position at time `t`: waits at the first waypoint until
    /// `start_time`, walks the polyline, then holds the last waypoint.
    pub fn position_at(&self, t: f64) -> Vec3 {
        let mut remaining = t - self.start_time;
        let mut here = Vec3::from(self.waypoints[0].pos);
        if remaining <= 0.0 {
            return here;
        }
        for w in self.waypoints.windows(2) {
            let next = Vec3::from(w[1].pos);
            let len = (next - here).norm();
            let dur = len / w[0].speed;
            if remaining < dur {
                return here + (next - here) * (remaining / dur);
            }
            remaining -= dur;
            here = next;
        }
        here
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeKeyframe {
    pub t: f64,
    /// Fixed direction in the vehicle frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<[f64; 3]>,
    /// Follow an actor's centre.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub look_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum GazeScript {
    /// Step-held keyframes; `blinks` are `[start, end]` intervals.
    Scripted {
        origin_m: [f64; 3],
        keyframes: Vec<GazeKeyframe>,
        #[serde(default)]
        blinks: Vec<[f64; 2]>,
    },
    /// No scripted gaze; a live session supplies it.
    UserDriven {
        #[serde(default = "default_eye")]
        origin_m: [f64; 3],
    },
}

fn default_eye() -> [f64; 3] {
    [-0.8, 0.4, 1.2]
}

impl GazeScript {
    pub fn origin_m(&self) -> Vec3 {
        match self {
            GazeScript::Scripted { origin_m, .. } | GazeScript::UserDriven { origin_m } => Vec3::from(*origin_m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorNoise {
    pub position_sigma: f64,
    pub velocity_sigma: f64,
    pub gaze_sigma_rad: f64,
}

/// Obstacle sensor coverage: actors outside are not reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorLimits {
    pub max_range: f64,
    pub half_fov_deg: f64,
}

impl Default for SensorLimits {
    fn default() -> Self {
        Self {
            max_range: 120.0,
            half_fov_deg: 60.0,
        }
    }
}

impl SensorLimits {
    pub fn sees(&self, p_m: &Vec3) -> bool {
        p_m.x > 0.0 && p_m.norm() <= self.max_range && p_m.y.atan2(p_m.x).abs() <= self.half_fov_deg.to_radians()
    }
}

fn default_gaze_rate() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub tick_rate: f64,
    #[serde(default = "default_gaze_rate")]
    pub gaze_rate: f64,
    pub seed: u64,
    pub ego: EgoScript,
    #[serde(default)]
    pub actors: Vec<ActorScript>,
    pub gaze: GazeScript,
    #[serde(default)]
    pub noise: SensorNoise,
    #[serde(default)]
    pub sensor: SensorLimits,
    /// Eye-tracker frame to vehicle frame.
    #[serde(default)]
    pub calibration_truth: RigidTransform,
    #[serde(default)]
    pub scene_camera: SceneCamera,
}

pub const BUNDLED: [(&str, &str); 4] = [
    ("crossing-pedestrian", include_str!("../scenarios/crossing-pedestrian.json")),
    ("lead-vehicle-braking", include_str!("../scenarios/lead-vehicle-braking.json")),
    ("parked-cars", include_str!("../scenarios/parked-cars.json")),
    ("multi-hazard", include_str!("../scenarios/multi-hazard.json")),
];

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn bundled(name: &str) -> Result<Self, ScenarioError> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_json(text).expect("bundled scenarios are valid"))
            .ok_or_else(|| ScenarioError::Unknown(name.to_string()))
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration * self.tick_rate).round() as u64
    }

    pub fn tick_time(&self, frame: u64) -> f64 {
        frame as f64 / self.tick_rate
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(invalid("duration", "must be a non-negative number"));
        }
        if !(10.0..=120.0).contains(&self.tick_rate) {
            return Err(invalid("tick_rate", "must lie in [10, 120] Hz"));
        }
        if !(self.gaze_rate.is_finite() && self.gaze_rate > 0.0) {
            return Err(invalid("gaze_rate", "must be positive"));
        }
        let p = &self.ego.speed_profile;
        if p.is_empty() {
            return Err(invalid("ego.speed_profile", "needs at least one knot"));
        }
        for (i, [t, v]) in p.iter().enumerate() {
            if !(t.is_finite() && v.is_finite() && *v >= 0.0) {
                return Err(invalid(format!("ego.speed_profile[{i}]"), "speed must be finite and >= 0"));
            }
            if i > 0 && *t <= p[i - 1][0] {
                return Err(invalid(format!("ego.speed_profile[{i}]"), "times must increase"));
            }
        }
        let mut ids = BTreeSet::new();
        for (i, a) in self.actors.iter().enumerate() {
            let field = |f: &str| format!("actors[{i}].{f}");
            if !ids.insert(a.id.as_str()) {
                return Err(invalid(field("id"), format!("duplicate id {:?}", a.id)));
            }
            if !a.half_extents.iter().all(|h| h.is_finite() && *h > 0.0) {
                return Err(invalid(field("half_extents"), "must be positive"));
            }
            if a.waypoints.is_empty() {
                return Err(invalid(field("waypoints"), "needs at least one waypoint"));
            }
            if !a.start_time.is_finite() {
                return Err(invalid(field("start_time"), "must be finite"));
            }
            for (k, w) in a.waypoints.iter().enumerate() {
                if !w.pos.iter().all(|v| v.is_finite()) {
                    return Err(invalid(field(&format!("waypoints[{k}].pos")), "must be finite"));
                }
                if k + 1 < a.waypoints.len() && !(w.speed.is_finite() && w.speed > 0.0) {
                    return Err(invalid(field(&format!("waypoints[{k}].speed")), "must be positive"));
                }
            }
        }
        if let GazeScript::Scripted { keyframes, blinks, .. } = &self.gaze {
            if keyframes.is_empty() {
                return Err(invalid("gaze.keyframes", "needs at least one keyframe"));
            }
            for (i, k) in keyframes.iter().enumerate() {
                let field = format!("gaze.keyframes[{i}]");
                if i > 0 && k.t < keyframes[i - 1].t {
                    return Err(invalid(field, "times must not decrease"));
                }
                match (&k.dir, &k.look_at) {
                    (Some(d), None) => {
                        let d = Vec3::from(*d);
                        if !(d.iter().all(|v| v.is_finite()) && d.norm() > 0.0) {
                            return Err(invalid(field + ".dir", "must be a non-zero vector"));
                        }
                    }
                    (None, Some(id)) => {
                        if !ids.contains(id.as_str()) {
                            return Err(invalid(field + ".look_at", format!("unknown actor {id:?}")));
                        }
                    }
                    _ => return Err(invalid(field, "needs exactly one of dir, look_at")),
                }
            }
            for (i, [a, b]) in blinks.iter().enumerate() {
                if !(a.is_finite() && b.is_finite() && a <= b) {
                    return Err(invalid(format!("gaze.blinks[{i}]"), "must be an ordered interval"));
                }
            }
        }
        let n = self.noise;
        for (field, v) in [
            ("noise.position_sigma", n.position_sigma),
            ("noise.velocity_sigma", n.velocity_sigma),
            ("noise.gaze_sigma_rad", n.gaze_sigma_rad),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, "must be >= 0"));
            }
        }
        if !(self.sensor.max_range > 0.0 && self.sensor.half_fov_deg > 0.0) {
            return Err(invalid("sensor", "range and field of view must be positive"));
        }
        self.scene_camera
            .intrinsics
            .validate()
            .map_err(|e| invalid("scene_camera.intrinsics", e.to_string()))?;
        Ok(())
    }
}

/// Live inputs that replace parts of the script.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub ego_speed: Option<f64>,
    /// Gaze ray in the vehicle frame.
    pub gaze_ray_m: Option<Ray>,
}

/// Ground truth at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub frame: u64,
    pub time: f64,
    pub ego: EgoState,
    /// Distance driven along world x (m).
    pub ego_position: f64,
    /// Actors in the vehicle frame, in scenario order, including those the
    /// sensor cannot see.
    pub actors: Vec<ObstacleTrack>,
    pub gaze: Option<GazeSample>,
}

fn actor_track(s: &Scenario, a: &ActorScript, t: f64, ego_x: f64) -> ObstacleTrack {
    let h = 1.0 / s.tick_rate;
    let p = a.position_at(t);
    ObstacleTrack {
        id: a.id.clone(),
        class: a.class,
        position_m: p - Vec3::new(ego_x, 0.0, 0.0),
        velocity_m: (a.position_at(t + h) - p) / h,
        half_extents: Vec3::from(a.half_extents),
        timestamp: t,
    }
}

fn in_blink(blinks: &[[f64; 2]], t: f64) -> bool {
    blinks.iter().any(|[a, b]| t >= *a && t < *b)
}

/// True gaze at time `t` in the eye-tracker frame.
pub fn gaze_truth(s: &Scenario, t: f64, ego_x: f64, overrides: &Overrides) -> Option<GazeSample> {
    let to_f = s.calibration_truth.inverse();
    let (origin_m, dir_m, blink) = match (&overrides.gaze_ray_m, &s.gaze) {
        (Some(ray), _) => (*ray.origin(), *ray.direction(), false),
        (None, GazeScript::UserDriven { .. }) => return None,
        (None, GazeScript::Scripted { origin_m, keyframes, blinks }) => {
            let idx = keyframes.partition_point(|k| k.t <= t).max(1) - 1;
            let key = &keyframes[idx];
            let eye = Vec3::from(*origin_m);
            let dir = match (&key.dir, &key.look_at) {
                (Some(d), _) => Vec3::from(*d),
                (None, Some(id)) => {
                    let a = s.actors.iter().find(|a| &a.id == id)?;
                    a.position_at(t) - Vec3::new(ego_x, 0.0, 0.0) - eye
                }
                (None, None) => return None,
            };
            if dir.norm() == 0.0 {
                return None;
            }
            (eye, dir.normalize(), in_blink(blinks, t))
        }
    };
    let origin_f = to_f.transform_point(&origin_m);
    let mut g = GazeSample::new(t, origin_f, to_f.transform_vector(&dir_m).normalize());
    if blink {
        g.blink = true;
        g.eyelid_opening = 0.0;
    }
    Some(g)
}

pub fn initial_world(s: &Scenario) -> WorldState {
    world_at(s, 0, 0.0, s.ego.speed_at(0.0), &Overrides::default())
}

fn world_at(s: &Scenario, frame: u64, ego_x: f64, speed: f64, overrides: &Overrides) -> WorldState {
    let t = s.tick_time(frame);
    WorldState {
        frame,
        time: t,
        ego: EgoState {
            speed,
            yaw_rate: s.ego.yaw_rate,
            timestamp: t,
        },
        ego_position: ego_x,
        actors: s.actors.iter().map(|a| actor_track(s, a, t, ego_x)).collect(),
        gaze: gaze_truth(s, t, ego_x, overrides),
    }
}

/// Advances the world by one tick. `dt` must equal `1 / tick_rate`.
pub fn step(world: &WorldState, s: &Scenario, dt: f64) -> WorldState {
    step_with(world, s, dt, &Overrides::default())
}

pub fn step_with(world: &WorldState, s: &Scenario, dt: f64, overrides: &Overrides) -> WorldState {
    debug_assert!((dt * s.tick_rate - 1.0).abs() < 1e-9, "dt must be one tick");
    let frame = world.frame + 1;
    let t = s.tick_time(frame);
    let h = t - world.time;
    let speed = overrides.ego_speed.unwrap_or_else(|| s.ego.speed_at(t)).max(0.0);
    let ego_x = world.ego_position + 0.5 * (world.ego.speed + speed) * h;
    world_at(s, frame, ego_x, speed, overrides)
}

/// Key for one noise draw: the generator is seeded directly from the
/// counter tuple, so any draw can be reproduced independently.
pub fn keyed_rng(seed: u64, stream: u64, index: u64, sub: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, v) in [seed, stream, index, sub].into_iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn add_noise(v: &Vec3, sigma: f64, rng: &mut ChaCha8Rng) -> Vec3 {
    if sigma == 0.0 {
        return *v;
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    Vec3::new(v.x + n.sample(rng), v.y + n.sample(rng), v.z + n.sample(rng))
}

/// Sensor view of one tick: visible actors with per-axis Gaussian noise,
/// ego passed through, no gaze attached.
pub fn emit_frame(world: &WorldState, s: &Scenario) -> FrameRecord {
    let obstacles = world
        .actors
        .iter()
        .enumerate()
        .filter(|(_, a)| s.sensor.sees(&a.position_m))
        .map(|(i, a)| {
            let mut rng = keyed_rng(s.seed, STREAM_OBSTACLES, world.frame, i as u64);
            let mut o = a.clone();
            o.position_m = add_noise(&a.position_m, s.noise.position_sigma, &mut rng);
            o.velocity_m = add_noise(&a.velocity_m, s.noise.velocity_sigma, &mut rng);
            o
        })
        .collect();
    FrameRecord {
        t: world.time,
        ego: world.ego,
        obstacles,
        gaze: None,
    }
}

fn truth_frame(world: &WorldState, s: &Scenario) -> FrameRecord {
    FrameRecord {
        t: world.time,
        ego: world.ego,
        obstacles: world.actors.iter().filter(|a| s.sensor.sees(&a.position_m)).cloned().collect(),
        gaze: None,
    }
}

/// Eye-tracker noise: the direction is tilted by an angle ~ N(0, σ) about a
/// uniformly oriented perpendicular axis.
pub fn perturb_gaze(g: &GazeSample, sigma: f64, seed: u64, index: u64) -> GazeSample {
    if sigma == 0.0 {
        return g.clone();
    }
    let mut rng = keyed_rng(seed, STREAM_GAZE, index, 0);
    let angle = Normal::new(0.0, sigma).expect("finite sigma").sample(&mut rng);
    let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
    let mut out = g.clone();
    out.gaze_dir_f = perturb_direction(&g.gaze_dir_f, angle, azimuth);
    out
}

/// One emitted tick.
#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    pub world: WorldState,
    pub record: FrameRecord,
    pub truth: FrameRecord,
}

/// Incremental runner shared by the offline `run` and live sessions.
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: Scenario,
    world: Option<WorldState>,
    /// Latest gaze sample at or before the current tick, as (truth, noisy).
    last_gaze: Option<(GazeSample, GazeSample)>,
    next_gaze_index: u64,
    pub overrides: Overrides,
}

impl Simulator {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            world: None,
            last_gaze: None,
            next_gaze_index: 0,
            overrides: Overrides::default(),
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn world(&self) -> Option<&WorldState> {
        self.world.as_ref()
    }

    pub fn finished(&self) -> bool {
        let next = self.world.as_ref().map_or(0, |w| w.frame + 1);
        next >= self.scenario.frame_count()
    }

    /// Emits the next tick, or `None` once the scenario is over.
    pub fn next_frame(&mut self) -> Option<SimFrame> {
        if self.finished() {
            return None;
        }
        let s = &self.scenario;
        let (prev, world) = match &self.world {
            None => {
                let mut w = initial_world(s);
                if let Some(v) = self.overrides.ego_speed {
                    w.ego.speed = v.max(0.0);
                }
                w.gaze = gaze_truth(s, 0.0, 0.0, &self.overrides);
                (None, w)
            }
            Some(w) => (Some(w.clone()), step_with(w, s, 1.0 / s.tick_rate, &self.overrides)),
        };

        // Gaze samples falling in (previous tick, this tick].
        let mut truth_stream: Vec<GazeSample> = Vec::new();
        let mut noisy_stream: Vec<GazeSample> = Vec::new();
        if let Some((t, n)) = &self.last_gaze {
            truth_stream.push(t.clone());
            noisy_stream.push(n.clone());
        }
        loop {
            let j = self.next_gaze_index;
            let tg = j as f64 / s.gaze_rate;
            if tg > world.time {
                break;
            }
            let ego_x = match &prev {
                Some(p) if world.time > p.time => {
                    let w = (tg - p.time) / (world.time - p.time);
                    p.ego_position + (world.ego_position - p.ego_position) * w
                }
                _ => world.ego_position,
            };
            if let Some(g) = gaze_truth(s, tg, ego_x, &self.overrides) {
                let noisy = if self.overrides.gaze_ray_m.is_some() {
                    g.clone()
                } else {
                    perturb_gaze(&g, s.noise.gaze_sigma_rad, s.seed, j)
                };
                truth_stream.push(g);
                noisy_stream.push(noisy);
            }
            self.next_gaze_index += 1;
        }
        if let (Some(t), Some(n)) = (truth_stream.last(), noisy_stream.last()) {
            self.last_gaze = Some((t.clone(), n.clone()));
        }

        let mut record = emit_frame(&world, s);
        record.gaze = gaze_at(&noisy_stream, world.time, DEFAULT_MAX_SKEW);
        let mut truth = truth_frame(&world, s);
        truth.gaze = gaze_at(&truth_stream, world.time, DEFAULT_MAX_SKEW);
        self.world = Some(world.clone());
        Some(SimFrame { world, record, truth })
    }
}

/// Emitted log plus the noiseless ground-truth sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationLog {
    pub records: Vec<FrameRecord>,
    pub truth: Vec<FrameRecord>,
}

pub fn run(scenario: &Scenario) -> Result<SimulationLog, ScenarioError> {
    scenario.validate()?;
    let mut sim = Simulator::new(scenario.clone());
    let mut records = Vec::with_capacity(scenario.frame_count() as usize);
    let mut truth = Vec::with_capacity(records.capacity());
    while let Some(f) = sim.next_frame() {
        records.push(f.record);
        truth.push(f.truth);
    }
    Ok(SimulationLog { records, truth })
}
