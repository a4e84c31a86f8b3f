//! Obstacle and ego state, and the dangerousness primitives.
//!
//! Obstacle positions are expressed in the vehicle frame `M`; velocities are
//! ground-relative, expressed in the same axes. The ego vehicle moves along
//! +x at its reported speed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb3, GeometryError, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObstacleClass {
    Pedestrian,
    Car,
    Truck,
    Bicycle,
    Motorcycle,
}

impl ObstacleClass {
    pub const ALL: [ObstacleClass; 5] = [
        ObstacleClass::Pedestrian,
        ObstacleClass::Car,
        ObstacleClass::Truck,
        ObstacleClass::Bicycle,
        ObstacleClass::Motorcycle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObstacleClass::Pedestrian => "pedestrian",
            ObstacleClass::Car => "car",
            ObstacleClass::Truck => "truck",
            ObstacleClass::Bicycle => "bicycle",
            ObstacleClass::Motorcycle => "motorcycle",
        }
    }

    pub fn is_pedestrian(&self) -> bool {
        matches!(self, ObstacleClass::Pedestrian)
    }
}

impl fmt::Display for ObstacleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObstacleClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObstacleClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown obstacle class {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleTrack {
    pub id: String,
    pub class: ObstacleClass,
    pub position_m: Vec3,
    pub velocity_m: Vec3,
    pub half_extents: Vec3,
    pub timestamp: f64,
}

impl ObstacleTrack {
    /// Bounding box centred on the track position.
    pub fn bbox(&self) -> Result<Aabb3, GeometryError> {
        Aabb3::new(self.position_m, self.half_extents)
    }

    pub fn range(&self) -> f64 {
        self.position_m.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EgoState {
    pub speed: f64,
    /// Carried for completeness; not used by the TTC approximation.
    pub yaw_rate: f64,
    pub timestamp: f64,
}

impl EgoState {
    pub fn velocity(&self) -> Vec3 {
        Vec3::new(self.speed, 0.0, 0.0)
    }
}

/// Tunable thresholds of the danger model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DangerConfig {
    /// TTC at and beyond which an obstacle is not dangerous (s).
    pub ttc_max: f64,
    /// Closing speeds at or below this are treated as non-approaching (m/s).
    pub closing_epsilon: f64,
    /// Speeds below this are stationary (m/s).
    pub stationary_speed: f64,
}

impl Default for DangerConfig {
    fn default() -> Self {
        Self {
            ttc_max: 10.0,
            closing_epsilon: 0.1,
            stationary_speed: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DangerAssessment {
    pub obstacle_id: String,
    pub ttc: f64,
    pub dangerousness: f64,
    pub stationary: bool,
    pub considered: bool,
    pub eligible: bool,
}

/// Line-of-sight closing speed; positive when the obstacle approaches.
/// Returns 0 for an obstacle at the ego origin.
pub fn closing_speed(ego: &EgoState, o: &ObstacleTrack) -> f64 {
    let range = o.range();
    if range == 0.0 {
        return 0.0;
    }
    let v_rel = o.velocity_m - ego.velocity();
    -v_rel.dot(&(o.position_m / range))
}

/// Range divided by closing speed; `+∞` for non-approaching obstacles and
/// `0` for an obstacle already at the ego origin.
pub fn ttc(ego: &EgoState, o: &ObstacleTrack, cfg: &DangerConfig) -> f64 {
    let range = o.range();
    if range == 0.0 {
        return 0.0;
    }
    let closing = closing_speed(ego, o);
    if closing > cfg.closing_epsilon {
        range / closing
    } else {
        f64::INFINITY
    }
}

pub fn is_stationary(o: &ObstacleTrack, cfg: &DangerConfig) -> bool {
    o.velocity_m.norm() < cfg.stationary_speed
}

/// Maps a TTC onto `[0, 1]`: `1 − ttc / ttc_max`, clamped.
pub fn dangerousness(ttc_value: f64, cfg: &DangerConfig) -> f64 {
    if ttc_value.is_nan() {
        return 0.0;
    }
    (1.0 - ttc_value / cfg.ttc_max).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn track(pos: [f64; 3], vel: [f64; 3]) -> ObstacleTrack {
        ObstacleTrack {
            id: "o".into(),
            class: ObstacleClass::Car,
            position_m: Vec3::from(pos),
            velocity_m: Vec3::from(vel),
            half_extents: Vec3::new(2.0, 0.9, 0.75),
            timestamp: 0.0,
        }
    }

    fn ego(speed: f64) -> EgoState {
        EgoState { speed, ..Default::default() }
    }

    /// Hand evaluation of -(v_rel · û) for the off-axis example, component by component.
    fn off_axis_oracle() -> (f64, f64) {
        let (px, py) = (20.0_f64, -5.0_f64);
        let range = (px * px + py * py).sqrt();
        let (vx, vy) = (0.0 - 10.0, 2.0);
        let closing = -(vx * px / range + vy * py / range);
        (closing, range / closing)
    }

    #[test]
    fn closing_speed_examples() {
        assert_eq!(closing_speed(&ego(20.0), &track([40.0, 0.0, 0.0], [10.0, 0.0, 0.0])), 10.0);
        assert_eq!(closing_speed(&ego(10.0), &track([40.0, 0.0, 0.0], [15.0, 0.0, 0.0])), -5.0);
        let (oracle, _) = off_axis_oracle();
        assert_abs_diff_eq!(oracle, 10.1865, epsilon = 1e-4);
        assert_abs_diff_eq!(
            closing_speed(&ego(10.0), &track([20.0, -5.0, 0.0], [0.0, 2.0, 0.0])),
            oracle,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ttc_examples() {
        let cfg = DangerConfig::default();
        assert_eq!(ttc(&ego(20.0), &track([40.0, 0.0, 0.0], [10.0, 0.0, 0.0]), &cfg), 4.0);
        assert_eq!(ttc(&ego(10.0), &track([40.0, 0.0, 0.0], [15.0, 0.0, 0.0]), &cfg), f64::INFINITY);
        let (_, oracle) = off_axis_oracle();
        assert_abs_diff_eq!(oracle, 2.0238, epsilon = 1e-4);
        assert_abs_diff_eq!(
            ttc(&ego(10.0), &track([20.0, -5.0, 0.0], [0.0, 2.0, 0.0]), &cfg),
            oracle,
            epsilon = 1e-12
        );
    }

    #[test]
    fn slow_closing_is_not_approaching() {
        let cfg = DangerConfig::default();
        assert_eq!(ttc(&ego(10.05), &track([40.0, 0.0, 0.0], [10.0, 0.0, 0.0]), &cfg), f64::INFINITY);
        assert_eq!(ttc(&ego(0.0), &track([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]), &cfg), 0.0);
    }

    #[test]
    fn stationary_examples() {
        let cfg = DangerConfig::default();
        assert!(is_stationary(&track([1.0, 0.0, 0.0], [0.0, 0.0, 0.0]), &cfg));
        assert!(!is_stationary(&track([1.0, 0.0, 0.0], [5.0, 0.0, 0.0]), &cfg));
        // |(0.1, 0.1, 0)| = 0.1414 < 0.2
        assert!(is_stationary(&track([1.0, 0.0, 0.0], [0.1, 0.1, 0.0]), &cfg));
    }

    #[test]
    fn dangerousness_examples() {
        let cfg = DangerConfig::default();
        assert_eq!(dangerousness(f64::INFINITY, &cfg), 0.0);
        assert_eq!(dangerousness(0.0, &cfg), 1.0);
        assert_abs_diff_eq!(dangerousness(4.0, &cfg), 0.6, epsilon = 1e-15);
        assert_eq!(dangerousness(12.0, &cfg), 0.0);
    }

    #[test]
    fn class_names_round_trip() {
        for c in ObstacleClass::ALL {
            assert_eq!(c.as_str().parse::<ObstacleClass>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{c}\""));
        }
        assert!("tram".parse::<ObstacleClass>().is_err());
    }
}
