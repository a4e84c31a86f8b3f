//! Per-frame processing from a fused record to the displayed vane and the
//! monitoring views. Offline replay and live sessions both go through
//! [`Pipeline::process`], so they agree frame for frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{gaze_ray_in_m, AttentionLedger};
use crate::config::Config;
use crate::geometry::{Ray, RigidTransform};
use crate::metaphor::{animate_interval, assess_all, initial_state, target_configuration, MetaphorError, WeathervaneState};
use crate::perception::DangerAssessment;
use crate::replay::FrameRecord;
use crate::restitution::{bird_view, scene_overlay, OverlayPrimitive, RestitutionError, SceneCamera};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Metaphor(#[from] MetaphorError),
    #[error(transparent)]
    Restitution(#[from] RestitutionError),
    #[error("frame at t={t} precedes the previous frame")]
    TimeWentBackwards { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub t: f64,
    pub vane: WeathervaneState,
    pub assessments: Vec<DangerAssessment>,
    pub bird: Vec<OverlayPrimitive>,
    pub scene: Vec<OverlayPrimitive>,
    /// Obstacle ids inside their considered window, sorted.
    pub considered: Vec<String>,
    /// Ids that became considered at this frame.
    pub newly_considered: Vec<String>,
    pub gaze_ray_m: Option<Ray>,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: Config,
    calib: RigidTransform,
    scene: SceneCamera,
    ledger: AttentionLedger,
    vane: Option<WeathervaneState>,
}

impl Pipeline {
    pub fn new(cfg: Config, calib_f_to_m: RigidTransform, scene: SceneCamera) -> Self {
        Self {
            ledger: AttentionLedger::new(cfg.attention),
            cfg,
            calib: calib_f_to_m,
            scene,
            vane: None,
        }
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn ledger(&self) -> &AttentionLedger {
        &self.ledger
    }

    pub fn vane(&self) -> Option<&WeathervaneState> {
        self.vane.as_ref()
    }

    pub fn scene_camera(&self) -> &SceneCamera {
        &self.scene
    }

    pub fn calibration(&self) -> &RigidTransform {
        &self.calib
    }

    /// Ledger update, danger assessment, ranking, animation, then views.
    pub fn process(&mut self, rec: &FrameRecord) -> Result<FrameOutput, PipelineError> {
        let t = rec.t;
        if let Some(prev) = &self.vane {
            if t < prev.timestamp {
                return Err(PipelineError::TimeWentBackwards { t });
            }
        }
        let gaze_ray_m = rec
            .gaze
            .as_ref()
            .filter(|g| g.is_usable(self.ledger.config()))
            .and_then(|g| gaze_ray_in_m(g, &self.calib).ok());
        let newly_considered = self.ledger.update(gaze_ray_m.as_ref(), &rec.obstacles, t);
        self.ledger.prune(t);

        let assessments = assess_all(&rec.obstacles, &rec.ego, &self.ledger, t, &self.cfg.danger);
        let target = target_configuration(&assessments, &rec.obstacles, t, &self.cfg.metaphor);
        let vane = match &self.vane {
            None => initial_state(&target),
            Some(prev) if t > prev.timestamp => animate_interval(prev, &target, t - prev.timestamp, &self.cfg.metaphor)?,
            Some(prev) => prev.clone(),
        };
        self.vane = Some(vane.clone());

        let bird = bird_view(&rec.obstacles, gaze_ray_m.as_ref(), self.cfg.bird_extent_m)?;
        let scene = scene_overlay(&self.scene, &rec.obstacles, gaze_ray_m.as_ref());
        Ok(FrameOutput {
            t,
            vane,
            assessments,
            bird,
            scene,
            considered: self.ledger.considered_ids(t),
            newly_considered,
            gaze_ray_m,
        })
    }
}

/// Upper edges of the finite TTC bins (s); values beyond the last edge and
/// infinite values are counted separately.
pub const TTC_BIN_EDGES: [f64; 10] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TtcHistogram {
    pub bin_upper_edges_s: Vec<f64>,
    pub counts: Vec<u64>,
    pub beyond: u64,
    pub infinite: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionEvent {
    pub t: f64,
    pub obstacle_id: String,
    /// Whether the obstacle had an arrow on the previous frame.
    pub was_displayed: bool,
}

/// Summary of a replay.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub frames: u64,
    pub frames_with_arrows: u64,
    pub max_arrows: usize,
    /// `arrow_count_frames[k]` = number of frames showing exactly k arrows.
    pub arrow_count_frames: Vec<u64>,
    pub suppression_events: Vec<SuppressionEvent>,
    /// Over moving obstacles only.
    pub ttc_histogram: TtcHistogram,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsCollector {
    m: Metrics,
    last_displayed: Vec<String>,
}

impl MetricsCollector {
    pub fn new(max_arrows: usize) -> Self {
        Self {
            m: Metrics {
                arrow_count_frames: vec![0; max_arrows + 1],
                ttc_histogram: TtcHistogram {
                    bin_upper_edges_s: TTC_BIN_EDGES.to_vec(),
                    counts: vec![0; TTC_BIN_EDGES.len()],
                    ..Default::default()
                },
                ..Default::default()
            },
            last_displayed: Vec::new(),
        }
    }

    pub fn observe(&mut self, out: &FrameOutput) {
        let m = &mut self.m;
        m.frames += 1;
        let n = out.vane.arrows.len();
        if n > 0 {
            m.frames_with_arrows += 1;
        }
        m.max_arrows = m.max_arrows.max(n);
        if m.arrow_count_frames.len() <= n {
            m.arrow_count_frames.resize(n + 1, 0);
        }
        m.arrow_count_frames[n] += 1;
        for id in &out.newly_considered {
            m.suppression_events.push(SuppressionEvent {
                t: out.t,
                obstacle_id: id.clone(),
                was_displayed: self.last_displayed.contains(id),
            });
        }
        for a in out.assessments.iter().filter(|a| !a.stationary) {
            let h = &mut m.ttc_histogram;
            if a.ttc.is_infinite() {
                h.infinite += 1;
            } else {
                match TTC_BIN_EDGES.iter().position(|edge| a.ttc < *edge) {
                    Some(i) => h.counts[i] += 1,
                    None => h.beyond += 1,
                }
            }
        }
        self.last_displayed = out.vane.ids().map(str::to_string).collect();
    }

    pub fn finish(self) -> Metrics {
        self.m
    }
}
