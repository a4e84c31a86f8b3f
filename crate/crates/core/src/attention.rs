//! Driver visual activity: which hazards has the driver looked at?
//!
//! A hazard counts as *considered* once the gaze ray has stayed on its
//! bounding box for a continuous dwell of at least `dwell_min`; it then
//! stays considered for `considered_window` seconds after the latest hit.
//! Gaps of up to `max_gap` between hits do not break a dwell streak.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{ray_aabb_intersect, GeometryError, Ray, RigidTransform, Vec3};
use crate::perception::ObstacleTrack;

/// Slack on the dwell comparison for accumulated floating-point periods.
const DWELL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    pub dwell_min: f64,
    pub considered_window: f64,
    pub max_gap: f64,
    /// Samples with a smaller eyelid opening are discarded.
    pub min_eyelid_opening: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            dwell_min: 0.2,
            considered_window: 3.0,
            max_gap: 0.3,
            min_eyelid_opening: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazeSample {
    pub timestamp: f64,
    pub head_pose_f: RigidTransform,
    pub gaze_origin_f: Vec3,
    pub gaze_dir_f: Vec3,
    pub eyelid_opening: f64,
    pub pupil_diameter_mm: f64,
    pub blink: bool,
}

impl GazeSample {
    /// An open-eyed sample with the head pose placed at the eye.
    pub fn new(timestamp: f64, origin_f: Vec3, dir_f: Vec3) -> Self {
        Self {
            timestamp,
            head_pose_f: RigidTransform::from_translation(origin_f),
            gaze_origin_f: origin_f,
            gaze_dir_f: dir_f,
            eyelid_opening: 1.0,
            pupil_diameter_mm: 4.0,
            blink: false,
        }
    }

    pub fn is_usable(&self, cfg: &AttentionConfig) -> bool {
        !self.blink && self.eyelid_opening >= cfg.min_eyelid_opening
    }
}

/// Gaze ray re-expressed in the vehicle frame.
pub fn gaze_ray_in_m(g: &GazeSample, t_f_to_m: &RigidTransform) -> Result<Ray, GeometryError> {
    Ok(Ray::new(g.gaze_origin_f, g.gaze_dir_f)?.transformed(t_f_to_m))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionRecord {
    pub first_hit_time: f64,
    pub last_hit_time: f64,
    /// Length of the current dwell streak (s).
    pub accumulated_dwell: f64,
    pub considered_until: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionLedger {
    cfg: AttentionConfig,
    records: BTreeMap<String, AttentionRecord>,
}

impl AttentionLedger {
    pub fn new(cfg: AttentionConfig) -> Self {
        Self {
            cfg,
            records: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.cfg
    }

    pub fn record(&self, obstacle_id: &str) -> Option<&AttentionRecord> {
        self.records.get(obstacle_id)
    }

    pub fn records(&self) -> impl Iterator<Item = (&str, &AttentionRecord)> {
        self.records.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn considered(&self, obstacle_id: &str, now: f64) -> bool {
        self.records
            .get(obstacle_id)
            .and_then(|r| r.considered_until)
            .is_some_and(|until| now < until)
    }

    /// Ids considered at `now`, sorted.
    pub fn considered_ids(&self, now: f64) -> Vec<String> {
        self.records
            .iter()
            .filter(|(_, r)| r.considered_until.is_some_and(|u| now < u))
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// Folds one gaze ray (already in the vehicle frame) into the ledger.
    /// `None` stands for an unusable sample (blink, closed eyes, no data).
    /// Returns the ids that became considered at this update.
    pub fn update(&mut self, ray_m: Option<&Ray>, obstacles: &[ObstacleTrack], now: f64) -> Vec<String> {
        let Some(ray) = ray_m else {
            return Vec::new();
        };
        let mut newly = Vec::new();
        for o in obstacles {
            let Ok(bbox) = o.bbox() else { continue };
            if ray_aabb_intersect(ray, &bbox).is_none() {
                continue;
            }
            let was_considered = self.considered(&o.id, now);
            let rec = self.records.entry(o.id.clone()).or_insert(AttentionRecord {
                first_hit_time: now,
                last_hit_time: now,
                accumulated_dwell: 0.0,
                considered_until: None,
            });
            if now < rec.last_hit_time {
                continue;
            }
            let gap = now - rec.last_hit_time;
            if gap > self.cfg.max_gap {
                rec.accumulated_dwell = 0.0;
            } else {
                rec.accumulated_dwell += gap;
            }
            rec.last_hit_time = now;
            if rec.accumulated_dwell + DWELL_EPS >= self.cfg.dwell_min {
                rec.considered_until = Some(now + self.cfg.considered_window);
                if !was_considered {
                    newly.push(o.id.clone());
                }
            }
        }
        newly
    }

    /// Convenience wrapper: validates the sample, maps it through the
    /// calibration and updates the ledger.
    pub fn update_with_sample(
        &mut self,
        sample: Option<&GazeSample>,
        t_f_to_m: &RigidTransform,
        obstacles: &[ObstacleTrack],
        now: f64,
    ) -> Vec<String> {
        let ray = sample
            .filter(|g| g.is_usable(&self.cfg))
            .and_then(|g| gaze_ray_in_m(g, t_f_to_m).ok());
        self.update(ray.as_ref(), obstacles, now)
    }

    /// Drops records that can no longer influence any query or streak.
    pub fn prune(&mut self, now: f64) {
        let horizon = self.cfg.max_gap;
        self.records.retain(|_, r| {
            let streak_alive = now - r.last_hit_time <= horizon;
            let window_alive = r.considered_until.is_some_and(|u| now < u);
            streak_alive || window_alive
        });
    }
}
