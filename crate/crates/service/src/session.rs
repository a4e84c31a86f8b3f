//! One live session: simulator, attention ledger and animated vane, advanced
//! one tick at a time with the client controls received since the last tick.

use serde::{Deserialize, Serialize};

use daaria_core::config::Config;
use daaria_core::geometry::{Pixel, Ray};
use daaria_core::metaphor::{Rgb, WeathervaneState};
use daaria_core::pipeline::{FrameOutput, Pipeline, PipelineError};
use daaria_core::restitution::{OverlayPrimitive, SceneCamera};
use daaria_core::simulation::{Scenario, Simulator, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Run,
    Pause,
    /// Advance a single tick, then pause.
    Step,
}

/// Client inputs for one tick. `None` releases an override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    #[serde(default)]
    pub gaze_px: Option<[f64; 2]>,
    #[serde(default)]
    pub ego_speed: Option<f64>,
    #[serde(default)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Control(Controls),
    Load {
        scenario: String,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaneArrow {
    pub id: String,
    pub bearing: f64,
    pub height: f64,
    pub color: Rgb,
    pub symbol: String,
    pub danger: f64,
}

impl VaneArrow {
    pub fn from_state(vane: &WeathervaneState) -> Vec<VaneArrow> {
        vane.arrows
            .iter()
            .map(|a| VaneArrow {
                id: a.obstacle_id.clone(),
                bearing: a.current_bearing,
                height: a.current_height,
                color: a.color,
                symbol: a.symbol.clone(),
                danger: a.dangerousness,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    State {
        t: f64,
        tick: u64,
        vane: Vec<VaneArrow>,
        bird: Vec<OverlayPrimitive>,
        scene: Vec<OverlayPrimitive>,
        considered: Vec<String>,
    },
    Loaded {
        scenario: String,
        seed: u64,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("message serializes");
        s.push('\n');
        s
    }
}

/// Gaze ray (vehicle frame) through a scene-view pixel.
pub fn gaze_from_pixel(cam: &SceneCamera, px: [f64; 2]) -> Option<Ray> {
    let ray_s = cam.intrinsics.backproject(&Pixel::new(px[0], px[1])).ok()?;
    Some(ray_s.transformed(&cam.pose_m_to_s.inverse()))
}

#[derive(Debug)]
pub struct Session {
    scenario: Scenario,
    sim: Simulator,
    pipeline: Pipeline,
    mode: Mode,
    tick: u64,
    /// Overrides in force; `mode` is always `None` here.
    controls: Controls,
    last: Option<FrameOutput>,
}

impl Session {
    pub fn new(scenario: Scenario, cfg: Config) -> Self {
        let pipeline = Pipeline::new(cfg, scenario.calibration_truth, scenario.scene_camera);
        Self {
            sim: Simulator::new(scenario.clone()),
            scenario,
            pipeline,
            mode: Mode::Run,
            tick: 0,
            controls: Controls::default(),
            last: None,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Number of ticks advanced so far.
    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn finished(&self) -> bool {
        self.sim.finished()
    }

    pub fn last_output(&self) -> Option<&FrameOutput> {
        self.last.as_ref()
    }

    pub fn time(&self) -> Option<f64> {
        self.sim.world().map(|w| w.time)
    }

    /// Ground truth at the latest tick.
    pub fn world(&self) -> Option<&WorldState> {
        self.sim.world()
    }

    /// The overrides currently applied, without a mode change.
    pub fn current_controls(&self) -> Controls {
        self.controls.clone()
    }

    fn apply(&mut self, c: &Controls) {
        self.controls = Controls {
            mode: None,
            ..c.clone()
        };
        if let Some(m) = c.mode {
            self.mode = m;
        }
        self.sim.overrides.ego_speed = c.ego_speed.filter(|v| v.is_finite()).map(|v| v.max(0.0));
        self.sim.overrides.gaze_ray_m = c
            .gaze_px
            .and_then(|px| gaze_from_pixel(&self.scenario.scene_camera, px));
    }

    /// Applies `controls` (replacing earlier overrides), then advances one
    /// tick if the mode allows it.
    /// Returns the new state message, or `None` when nothing moved.
    pub fn step(&mut self, controls: &Controls) -> Result<Option<ServerMessage>, PipelineError> {
        self.apply(controls);
        if self.mode == Mode::Pause {
            return Ok(None);
        }
        if self.mode == Mode::Step {
            self.mode = Mode::Pause;
        }
        let Some(frame) = self.sim.next_frame() else {
            return Ok(None);
        };
        let out = self.pipeline.process(&frame.record)?;
        self.tick += 1;
        let msg = state_message(&out, self.tick);
        self.last = Some(out);
        Ok(Some(msg))
    }
}

pub fn state_message(out: &FrameOutput, tick: u64) -> ServerMessage {
    ServerMessage::State {
        t: out.t,
        tick,
        vane: VaneArrow::from_state(&out.vane),
        bird: out.bird.clone(),
        scene: out.scene.clone(),
        considered: out.considered.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        let c: ClientMessage =
            serde_json::from_str(r#"{"type":"control","gaze_px":[320,180],"ego_speed":null,"mode":"pause"}"#).unwrap();
        assert_eq!(
            c,
            ClientMessage::Control(Controls { gaze_px: Some([320.0, 180.0]), ego_speed: None, mode: Some(Mode::Pause) })
        );
        let l: ClientMessage = serde_json::from_str(r#"{"type":"load","scenario":"parked-cars","seed":5}"#).unwrap();
        assert_eq!(l, ClientMessage::Load { scenario: "parked-cars".into(), seed: Some(5) });
    }

    #[test]
    fn state_message_shape() {
        let mut s = Session::new(Scenario::bundled("crossing-pedestrian").unwrap(), Config::default());
        let msg = s.step(&Controls::default()).unwrap().unwrap();
        let v: serde_json::Value = serde_json::from_str(&msg.to_line()).unwrap();
        assert_eq!(v["type"], "state");
        assert_eq!(v["t"], 0.0);
        for key in ["vane", "bird", "scene", "considered"] {
            assert!(v[key].is_array(), "{key}");
        }
    }

    #[test]
    fn principal_pixel_looks_along_camera_axis() {
        let cam = SceneCamera::default();
        let ray = gaze_from_pixel(&cam, [cam.intrinsics.cx, cam.intrinsics.cy]).unwrap();
        assert!((ray.direction() - daaria_core::Vec3::x()).norm() < 1e-12);
        assert!(gaze_from_pixel(&cam, [-5.0, 0.0]).is_none());
    }
}
