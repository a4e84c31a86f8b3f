//! Weathervane configuration: which hazards get an arrow, in which order,
//! with which colour, sign and height, and how the arrows move.
//!
//! Arrows hang on a virtual pole ahead of the car. The most dangerous
//! hazard gets the tallest arrow; stationary hazards and hazards the driver
//! has recently looked at get none. Arrow motion follows a critically
//! damped spring per channel (bearing, height).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::AttentionLedger;
use crate::geometry::{bearing_elevation, wrap_angle, Vec3};
use crate::perception::{
    dangerousness, is_stationary, ttc, DangerAssessment, DangerConfig, EgoState, ObstacleClass,
    ObstacleTrack,
};

/// Arrows below this height have finished shrinking and are dropped.
const RETIRED_HEIGHT: f64 = 5e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaphorError {
    #[error("animation time step must lie in (0, 0.1] s, got {0}")]
    InvalidTimeStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLUE: Rgb = Rgb([0, 0, 255]);
    pub const GREEN: Rgb = Rgb([0, 255, 0]);
    pub const RED: Rgb = Rgb([255, 0, 0]);
}

/// Highway-code sign ids shown on the arrows, per obstacle class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolTable(pub BTreeMap<ObstacleClass, String>);

impl Default for SymbolTable {
    fn default() -> Self {
        Self(
            ObstacleClass::ALL
                .into_iter()
                .map(|c| (c, symbol_for(c).to_string()))
                .collect(),
        )
    }
}

impl SymbolTable {
    pub fn get(&self, class: ObstacleClass) -> &str {
        self.0.get(&class).map(String::as_str).unwrap_or_else(|| symbol_for(class))
    }
}

/// French highway-code warning signs: A13 pedestrians, A21 cyclists,
/// A14 other dangers.
pub fn symbol_for(class: ObstacleClass) -> &'static str {
    match class {
        ObstacleClass::Pedestrian => "A13",
        ObstacleClass::Bicycle => "A21",
        ObstacleClass::Car | ObstacleClass::Truck | ObstacleClass::Motorcycle => "A14",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaphorConfig {
    pub max_arrows: usize,
    /// Height lost per rank.
    pub height_step: f64,
    /// Natural frequency of the arrow springs (rad/s).
    pub omega_n: f64,
    /// Largest internal integration step (s).
    pub max_substep: f64,
    /// Where the pole stands, in the vehicle frame.
    #[serde(with = "crate::calibration::vec3_array")]
    pub pole_anchor_m: Vec3,
    pub symbols: SymbolTable,
}

impl Default for MetaphorConfig {
    fn default() -> Self {
        Self {
            max_arrows: 4,
            height_step: 0.22,
            omega_n: 8.0,
            max_substep: 0.25e-3,
            pole_anchor_m: Vec3::new(2.5, 0.0, 1.2),
            symbols: SymbolTable::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrowState {
    pub obstacle_id: String,
    pub target_bearing: f64,
    pub current_bearing: f64,
    pub bearing_velocity: f64,
    /// Carried for completeness; the pole is drawn flat.
    pub elevation: f64,
    pub target_height: f64,
    pub current_height: f64,
    pub height_velocity: f64,
    pub dangerousness: f64,
    pub color: Rgb,
    pub symbol: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeathervaneState {
    /// Displayed arrows, most dangerous first.
    pub arrows: Vec<ArrowState>,
    /// Arrows whose hazard left the display, shrinking towards zero height.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retiring: Vec<ArrowState>,
    #[serde(with = "crate::calibration::vec3_array")]
    pub pole_anchor_m: Vec3,
    pub timestamp: f64,
}

impl WeathervaneState {
    pub fn empty(pole_anchor_m: Vec3, timestamp: f64) -> Self {
        Self {
            arrows: Vec::new(),
            retiring: Vec::new(),
            pole_anchor_m,
            timestamp,
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.arrows.iter().map(|a| a.obstacle_id.as_str())
    }
}

/// Scores every obstacle against the three criteria: motion, driver
/// attention and time to collision.
pub fn assess_all(
    obstacles: &[ObstacleTrack],
    ego: &EgoState,
    ledger: &AttentionLedger,
    now: f64,
    cfg: &DangerConfig,
) -> Vec<DangerAssessment> {
    obstacles
        .iter()
        .map(|o| {
            let stationary = is_stationary(o, cfg);
            let considered = ledger.considered(&o.id, now);
            let ttc = ttc(ego, o, cfg);
            let d = dangerousness(ttc, cfg);
            DangerAssessment {
                obstacle_id: o.id.clone(),
                ttc,
                dangerousness: d,
                stationary,
                considered,
                eligible: !stationary && !considered && d > 0.0,
            }
        })
        .collect()
}

fn bearing_of(o: &ObstacleTrack) -> (f64, f64) {
    bearing_elevation(&o.position_m).unwrap_or((0.0, 0.0))
}

/// Target vane: eligible hazards ranked by dangerousness (ties: smaller
/// |bearing|, then id), truncated, with heights decreasing by rank.
pub fn target_configuration(
    assessments: &[DangerAssessment],
    obstacles: &[ObstacleTrack],
    now: f64,
    cfg: &MetaphorConfig,
) -> WeathervaneState {
    let by_id: BTreeMap<&str, &ObstacleTrack> = obstacles.iter().map(|o| (o.id.as_str(), o)).collect();
    let mut ranked: Vec<(&DangerAssessment, &ObstacleTrack, f64, f64)> = assessments
        .iter()
        .filter(|a| a.eligible)
        .filter_map(|a| {
            let o = by_id.get(a.obstacle_id.as_str())?;
            let (bearing, elevation) = bearing_of(o);
            Some((a, *o, bearing, elevation))
        })
        .collect();
    ranked.sort_by(|x, y| {
        y.0.dangerousness
            .total_cmp(&x.0.dangerousness)
            .then(x.2.abs().total_cmp(&y.2.abs()))
            .then_with(|| x.0.obstacle_id.cmp(&y.0.obstacle_id))
    });
    ranked.truncate(cfg.max_arrows);
    let arrows = ranked
        .into_iter()
        .enumerate()
        .map(|(rank, (a, o, bearing, elevation))| {
            let height = (1.0 - rank as f64 * cfg.height_step).clamp(0.0, 1.0);
            ArrowState {
                obstacle_id: a.obstacle_id.clone(),
                target_bearing: bearing,
                current_bearing: bearing,
                bearing_velocity: 0.0,
                elevation,
                target_height: height,
                current_height: height,
                height_velocity: 0.0,
                dangerousness: a.dangerousness,
                color: color_map(a.dangerousness),
                symbol: cfg.symbols.get(o.class).to_string(),
            }
        })
        .collect();
    WeathervaneState {
        arrows,
        retiring: Vec::new(),
        pole_anchor_m: cfg.pole_anchor_m,
        timestamp: now,
    }
}

const COLOR_STOPS: [[f64; 3]; 4] = [
    [0.0, 200.0, 0.0],
    [255.0, 215.0, 0.0],
    [255.0, 140.0, 0.0],
    [220.0, 0.0, 0.0],
];

/// Unrounded green → yellow → orange → red gradient.
pub fn color_map_exact(d: f64) -> [f64; 3] {
    let s = d.clamp(0.0, 1.0) * 3.0;
    let i = (s.floor() as usize).min(2);
    let f = s - i as f64;
    let (a, b) = (COLOR_STOPS[i], COLOR_STOPS[i + 1]);
    [
        a[0] + (b[0] - a[0]) * f,
        a[1] + (b[1] - a[1]) * f,
        a[2] + (b[2] - a[2]) * f,
    ]
}

pub fn color_map(d: f64) -> Rgb {
    let c = color_map_exact(d);
    Rgb(c.map(|v| v.round().clamp(0.0, 255.0) as u8))
}

/// Critically damped spring `a = ω²(target − x) − 2ωv`, semi-implicit
/// Euler with substeps no longer than `max_substep`.
pub fn spring_step(x: f64, v: f64, target: f64, omega_n: f64, dt: f64, max_substep: f64) -> (f64, f64) {
    let n = (dt / max_substep).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let (mut x, mut v) = (x, v);
    for _ in 0..n {
        let a = omega_n * omega_n * (target - x) - 2.0 * omega_n * v;
        v += a * h;
        x += v * h;
    }
    (x, v)
}

fn animate_arrow(arrow: &mut ArrowState, dt: f64, cfg: &MetaphorConfig) {
    // bearing: integrate the offset from the target along the short way round
    let offset = -wrap_angle(arrow.target_bearing - arrow.current_bearing);
    let (offset, bv) = spring_step(offset, arrow.bearing_velocity, 0.0, cfg.omega_n, dt, cfg.max_substep);
    arrow.current_bearing = wrap_angle(arrow.target_bearing + offset);
    arrow.bearing_velocity = bv;

    let (h, hv) = spring_step(
        arrow.current_height,
        arrow.height_velocity,
        arrow.target_height,
        cfg.omega_n,
        dt,
        cfg.max_substep,
    );
    if !(0.0..=1.0).contains(&h) {
        arrow.current_height = h.clamp(0.0, 1.0);
        arrow.height_velocity = 0.0;
    } else {
        arrow.current_height = h;
        arrow.height_velocity = hv;
    }
}

/// Advances the displayed vane towards `target` by `dt` seconds.
///
/// Arrows keep their motion state across frames by obstacle id. New arrows
/// rise from zero height at their target bearing; arrows absent from the
/// target move to `retiring`, shrink, and are dropped near zero height.
pub fn animate_step(
    current: &WeathervaneState,
    target: &WeathervaneState,
    dt: f64,
    cfg: &MetaphorConfig,
) -> Result<WeathervaneState, MetaphorError> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(MetaphorError::InvalidTimeStep(dt));
    }
    let previous: BTreeMap<&str, &ArrowState> = current
        .arrows
        .iter()
        .chain(&current.retiring)
        .map(|a| (a.obstacle_id.as_str(), a))
        .collect();

    let mut arrows = Vec::with_capacity(target.arrows.len());
    for t in &target.arrows {
        let mut a = t.clone();
        match previous.get(t.obstacle_id.as_str()) {
            Some(p) => {
                a.current_bearing = p.current_bearing;
                a.bearing_velocity = p.bearing_velocity;
                a.current_height = p.current_height;
                a.height_velocity = p.height_velocity;
            }
            None => {
                a.current_bearing = t.target_bearing;
                a.bearing_velocity = 0.0;
                a.current_height = 0.0;
                a.height_velocity = 0.0;
            }
        }
        animate_arrow(&mut a, dt, cfg);
        arrows.push(a);
    }

    let mut retiring = Vec::new();
    for p in current.arrows.iter().chain(&current.retiring) {
        if target.arrows.iter().any(|t| t.obstacle_id == p.obstacle_id) {
            continue;
        }
        let mut a = p.clone();
        a.target_height = 0.0;
        animate_arrow(&mut a, dt, cfg);
        if a.current_height > RETIRED_HEIGHT {
            retiring.push(a);
        }
    }

    Ok(WeathervaneState {
        arrows,
        retiring,
        pole_anchor_m: target.pole_anchor_m,
        timestamp: target.timestamp,
    })
}

/// A freshly appearing vane: target arrows at zero height, nothing moving.
pub fn initial_state(target: &WeathervaneState) -> WeathervaneState {
    let mut s = target.clone();
    for a in &mut s.arrows {
        a.current_height = 0.0;
        a.height_velocity = 0.0;
        a.bearing_velocity = 0.0;
        a.current_bearing = a.target_bearing;
    }
    s
}

/// Animates across an arbitrary positive interval in admissible chunks.
pub fn animate_interval(
    current: &WeathervaneState,
    target: &WeathervaneState,
    dt: f64,
    cfg: &MetaphorConfig,
) -> Result<WeathervaneState, MetaphorError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(MetaphorError::InvalidTimeStep(dt));
    }
    let chunks = (dt / 0.1).ceil().max(1.0) as usize;
    let h = dt / chunks as f64;
    let mut state = current.clone();
    for _ in 0..chunks {
        state = animate_step(&state, target, h, cfg)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionConfig;
    use crate::geometry::Ray;
    use approx::assert_abs_diff_eq;

    fn obstacle(id: &str, class: ObstacleClass, pos: [f64; 3], vel: [f64; 3]) -> ObstacleTrack {
        ObstacleTrack {
            id: id.into(),
            class,
            position_m: Vec3::from(pos),
            velocity_m: Vec3::from(vel),
            half_extents: Vec3::new(0.4, 0.4, 0.9),
            timestamp: 0.0,
        }
    }

    fn assessment(id: &str, d: f64, eligible: bool) -> DangerAssessment {
        DangerAssessment {
            obstacle_id: id.into(),
            ttc: 10.0 * (1.0 - d),
            dangerousness: d,
            stationary: false,
            considered: !eligible,
            eligible,
        }
    }

    #[test]
    fn assess_moving_hazard() {
        // ego 10 m/s, obstacle 20 m ahead moving away at 0: closing 10 m/s, ttc 2 s, d = 1 - 2/10
        let obs = [obstacle("a", ObstacleClass::Car, [20.0, 0.0, 0.0], [0.0, 0.5, 0.0])];
        let ego = EgoState { speed: 10.0, ..Default::default() };
        let a = assess_all(&obs, &ego, &AttentionLedger::default(), 0.0, &DangerConfig::default());
        assert_eq!(a[0].ttc, 2.0);
        assert_abs_diff_eq!(a[0].dangerousness, 0.8, epsilon = 1e-15);
        assert!(a[0].eligible);
    }

    #[test]
    fn assess_parked_and_considered() {
        let ego = EgoState { speed: 10.0, ..Default::default() };
        let parked = obstacle("p", ObstacleClass::Car, [20.0, 3.0, 0.0], [0.0, 0.0, 0.0]);
        let seen = obstacle("s", ObstacleClass::Car, [20.0, 0.0, 0.75], [-2.0, 0.0, 0.0]);
        let mut ledger = AttentionLedger::new(AttentionConfig::default());
        let ray = Ray::new(Vec3::new(0.0, 0.0, 1.0), Vec3::x()).unwrap();
        for k in 0..=6 {
            ledger.update(Some(&ray), std::slice::from_ref(&seen), k as f64 * 0.05);
        }
        let obs = [parked, seen];
        let a = assess_all(&obs, &ego, &ledger, 1.3, &DangerConfig::default());
        assert!(a[0].stationary && !a[0].eligible);
        assert!(a[1].considered && !a[1].eligible);
    }

    #[test]
    fn target_filters_and_ranks() {
        let obs = [
            obstacle("A", ObstacleClass::Car, [20.0, 1.0, 0.0], [1.0, 0.0, 0.0]),
            obstacle("B", ObstacleClass::Car, [15.0, 1.0, 0.0], [0.0, 0.0, 0.0]),
            obstacle("C", ObstacleClass::Pedestrian, [10.0, -3.0, 0.0], [0.0, 1.0, 0.0]),
        ];
        let assessments = vec![
            assessment("A", 0.8, true),
            DangerAssessment { stationary: true, eligible: false, ..assessment("B", 0.9, false) },
            assessment("C", 0.5, false),
        ];
        let vane = target_configuration(&assessments, &obs, 0.0, &MetaphorConfig::default());
        assert_eq!(vane.ids().collect::<Vec<_>>(), vec!["A"]);
        assert_eq!(vane.arrows[0].target_height, 1.0);
        assert_eq!(vane.arrows[0].symbol, "A14");
    }

    #[test]
    fn target_truncates_to_four() {
        let ds = [0.9, 0.8, 0.7, 0.6, 0.5];
        let obs: Vec<ObstacleTrack> = (0..5)
            .map(|i| obstacle(&format!("o{i}"), ObstacleClass::Car, [10.0 + i as f64, 0.0, 0.0], [1.0, 0.0, 0.0]))
            .collect();
        let assessments: Vec<DangerAssessment> =
            ds.iter().enumerate().map(|(i, d)| assessment(&format!("o{i}"), *d, true)).collect();
        let vane = target_configuration(&assessments, &obs, 0.0, &MetaphorConfig::default());
        let heights: Vec<f64> = vane.arrows.iter().map(|a| a.target_height).collect();
        // 1 - i * 0.22
        let expected = [1.0, 0.78, 0.56, 0.34];
        assert_eq!(heights.len(), 4);
        for (h, e) in heights.iter().zip(expected) {
            assert_abs_diff_eq!(*h, e, epsilon = 1e-12);
        }
        assert!(vane.ids().all(|id| id != "o4"));
    }

    #[test]
    fn target_of_nothing_is_empty() {
        assert!(target_configuration(&[], &[], 0.0, &MetaphorConfig::default()).arrows.is_empty());
    }

    #[test]
    fn ties_break_on_bearing_then_id() {
        let obs = [
            obstacle("z", ObstacleClass::Car, [10.0, 5.0, 0.0], [1.0, 0.0, 0.0]),
            obstacle("y", ObstacleClass::Car, [10.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
            obstacle("x", ObstacleClass::Car, [10.0, -5.0, 0.0], [1.0, 0.0, 0.0]),
        ];
        let a: Vec<_> = ["z", "y", "x"].iter().map(|id| assessment(id, 0.5, true)).collect();
        let vane = target_configuration(&a, &obs, 0.0, &MetaphorConfig::default());
        assert_eq!(vane.ids().collect::<Vec<_>>(), vec!["y", "x", "z"]);
    }

    #[test]
    fn color_examples() {
        assert_eq!(color_map(0.0), Rgb([0, 200, 0]));
        assert_eq!(color_map(1.0), Rgb([220, 0, 0]));
        // halfway between the yellow (1/3) and orange (2/3) stops: 215 + (140 - 215) / 2 = 177.5
        assert_eq!(color_map(0.5), Rgb([255, 178, 0]));
        assert_eq!(color_map(1.0 / 3.0), Rgb([255, 215, 0]));
    }

    #[test]
    fn symbol_examples() {
        assert_eq!(symbol_for(ObstacleClass::Pedestrian), "A13");
        assert_eq!(symbol_for(ObstacleClass::Bicycle), "A21");
        assert_eq!(symbol_for(ObstacleClass::Car), "A14");
        assert_eq!(symbol_for(ObstacleClass::Truck), "A14");
        assert_eq!(symbol_for(ObstacleClass::Motorcycle), "A14");
    }

    fn single(id: &str, bearing: f64, height: f64) -> WeathervaneState {
        WeathervaneState {
            arrows: vec![ArrowState {
                obstacle_id: id.into(),
                target_bearing: bearing,
                current_bearing: bearing,
                bearing_velocity: 0.0,
                elevation: 0.0,
                target_height: height,
                current_height: height,
                height_velocity: 0.0,
                dangerousness: 0.5,
                color: color_map(0.5),
                symbol: "A14".into(),
            }],
            retiring: Vec::new(),
            pole_anchor_m: Vec3::zeros(),
            timestamp: 0.0,
        }
    }

    #[test]
    fn equilibrium_is_unchanged() {
        let s = single("a", 0.3, 1.0);
        let next = animate_step(&s, &s, 1.0 / 60.0, &MetaphorConfig::default()).unwrap();
        assert_eq!(next.arrows, s.arrows);
    }

    #[test]
    fn bearing_takes_short_way_round() {
        let cfg = MetaphorConfig::default();
        let mut cur = single("a", 3.0, 1.0);
        let target = single("a", -3.0, 1.0);
        for _ in 0..6 {
            cur = animate_step(&cur, &target, 1.0 / 60.0, &cfg).unwrap();
            let b = cur.arrows[0].current_bearing;
            // stays near ±π, never swings through 0
            assert!(b.abs() > 2.9, "{b}");
        }
    }

    #[test]
    fn new_arrow_rises_and_old_one_retires() {
        let cfg = MetaphorConfig::default();
        let empty = WeathervaneState::empty(Vec3::zeros(), 0.0);
        let target = single("a", 0.0, 1.0);
        let mut s = animate_step(&empty, &target, 1.0 / 60.0, &cfg).unwrap();
        assert!(s.arrows[0].current_height > 0.0 && s.arrows[0].current_height < 0.1);
        for _ in 0..120 {
            s = animate_step(&s, &target, 1.0 / 60.0, &cfg).unwrap();
        }
        assert!((s.arrows[0].current_height - 1.0).abs() < 0.01);
        let gone = single("b", 0.5, 1.0);
        s = animate_step(&s, &gone, 1.0 / 60.0, &cfg).unwrap();
        assert_eq!(s.ids().collect::<Vec<_>>(), vec!["b"]);
        assert_eq!(s.retiring[0].obstacle_id, "a");
        for _ in 0..180 {
            s = animate_step(&s, &gone, 1.0 / 60.0, &cfg).unwrap();
        }
        assert!(s.retiring.is_empty());
    }

    #[test]
    fn rejects_bad_time_step() {
        let s = single("a", 0.0, 1.0);
        let cfg = MetaphorConfig::default();
        assert!(animate_step(&s, &s, 0.0, &cfg).is_err());
        assert!(animate_step(&s, &s, 0.2, &cfg).is_err());
        assert!(animate_interval(&s, &s, 0.25, &cfg).is_ok());
    }
}
