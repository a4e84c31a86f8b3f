//! Replay logs: one JSON object per line, one line per obstacle frame.
//!
//! ```text
//! {"t": f, "ego": {"speed": f, "yaw_rate": f},
//!  "obstacles": [{"id": s, "class": s, "pos": [f,f,f], "vel": [f,f,f], "half_extents": [f,f,f]}],
//!  "gaze": {"origin": [f,f,f], "dir": [f,f,f], "eyelid": f, "pupil_mm": f, "blink": b} | null}
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a log back
//! reproduces every value bit for bit.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::GazeSample;
use crate::geometry::{RigidTransform, Vec3};
use crate::perception::{EgoState, ObstacleClass, ObstacleTrack};

/// Default tolerance between an obstacle frame and the nearest gaze sample (s).
pub const DEFAULT_MAX_SKEW: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: timestamp goes backwards")]
    NonMonotoneTimestamp { line: usize },
    #[error("line {line}: duplicate obstacle id {id:?}")]
    DuplicateObstacleId { line: usize, id: String },
    #[error("record at t={t}: non-finite value in {field}")]
    NonFinite { t: f64, field: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub t: f64,
    pub ego: EgoState,
    pub obstacles: Vec<ObstacleTrack>,
    pub gaze: Option<GazeSample>,
}

#[derive(Serialize, Deserialize)]
struct EgoWire {
    speed: f64,
    yaw_rate: f64,
}

#[derive(Serialize, Deserialize)]
struct ObstacleWire {
    id: String,
    class: ObstacleClass,
    pos: [f64; 3],
    vel: [f64; 3],
    half_extents: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct GazeWire {
    origin: [f64; 3],
    dir: [f64; 3],
    eyelid: f64,
    pupil_mm: f64,
    blink: bool,
}

#[derive(Serialize, Deserialize)]
struct RecordWire {
    t: f64,
    ego: EgoWire,
    obstacles: Vec<ObstacleWire>,
    #[serde(default)]
    gaze: Option<GazeWire>,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl From<&FrameRecord> for RecordWire {
    fn from(r: &FrameRecord) -> Self {
        RecordWire {
            t: r.t,
            ego: EgoWire {
                speed: r.ego.speed,
                yaw_rate: r.ego.yaw_rate,
            },
            obstacles: r
                .obstacles
                .iter()
                .map(|o| ObstacleWire {
                    id: o.id.clone(),
                    class: o.class,
                    pos: arr(&o.position_m),
                    vel: arr(&o.velocity_m),
                    half_extents: arr(&o.half_extents),
                })
                .collect(),
            gaze: r.gaze.as_ref().map(|g| GazeWire {
                origin: arr(&g.gaze_origin_f),
                dir: arr(&g.gaze_dir_f),
                eyelid: g.eyelid_opening,
                pupil_mm: g.pupil_diameter_mm,
                blink: g.blink,
            }),
        }
    }
}

impl From<RecordWire> for FrameRecord {
    fn from(w: RecordWire) -> Self {
        let t = w.t;
        FrameRecord {
            t,
            ego: EgoState {
                speed: w.ego.speed,
                yaw_rate: w.ego.yaw_rate,
                timestamp: t,
            },
            obstacles: w
                .obstacles
                .into_iter()
                .map(|o| ObstacleTrack {
                    id: o.id,
                    class: o.class,
                    position_m: Vec3::from(o.pos),
                    velocity_m: Vec3::from(o.vel),
                    half_extents: Vec3::from(o.half_extents),
                    timestamp: t,
                })
                .collect(),
            gaze: w.gaze.map(|g| {
                let origin = Vec3::from(g.origin);
                GazeSample {
                    timestamp: t,
                    // the log does not carry head orientation
                    head_pose_f: RigidTransform::from_translation(origin),
                    gaze_origin_f: origin,
                    gaze_dir_f: Vec3::from(g.dir),
                    eyelid_opening: g.eyelid,
                    pupil_diameter_mm: g.pupil_mm,
                    blink: g.blink,
                }
            }),
        }
    }
}

fn check_finite(r: &FrameRecord) -> Result<(), ReplayError> {
    let bad = |field| Err(ReplayError::NonFinite { t: r.t, field });
    if !r.t.is_finite() {
        return bad("t");
    }
    if !(r.ego.speed.is_finite() && r.ego.yaw_rate.is_finite()) {
        return bad("ego");
    }
    for o in &r.obstacles {
        let all = o.position_m.iter().chain(o.velocity_m.iter()).chain(o.half_extents.iter());
        if !all.into_iter().all(|v| v.is_finite()) {
            return bad("obstacles");
        }
    }
    if let Some(g) = &r.gaze {
        let all = g.gaze_origin_f.iter().chain(g.gaze_dir_f.iter());
        if !(all.into_iter().all(|v| v.is_finite()) && g.eyelid_opening.is_finite() && g.pupil_diameter_mm.is_finite()) {
            return bad("gaze");
        }
    }
    Ok(())
}

/// One JSON line, without the trailing newline.
pub fn encode_record(r: &FrameRecord) -> Result<String, ReplayError> {
    check_finite(r)?;
    Ok(serde_json::to_string(&RecordWire::from(r)).expect("record serializes"))
}

pub fn decode_record(line: &str, line_no: usize) -> Result<FrameRecord, ReplayError> {
    let wire: RecordWire = serde_json::from_str(line).map_err(|e| ReplayError::MalformedLine {
        line: line_no,
        message: e.to_string(),
    })?;
    let record = FrameRecord::from(wire);
    let mut seen = BTreeSet::new();
    for o in &record.obstacles {
        if !seen.insert(o.id.as_str()) {
            return Err(ReplayError::DuplicateObstacleId {
                line: line_no,
                id: o.id.clone(),
            });
        }
    }
    Ok(record)
}

pub fn write_log_to<W: Write>(records: &[FrameRecord], mut w: W) -> Result<(), ReplayError> {
    for r in records {
        w.write_all(encode_record(r)?.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_log(records: &[FrameRecord], path: impl AsRef<Path>) -> Result<(), ReplayError> {
    write_log_to(records, BufWriter::new(File::create(path)?))
}

/// Reads a log, checking the schema, id uniqueness per record and timestamp
/// monotonicity. Line numbers in errors are 1-based; blank lines are skipped.
pub fn read_log_from<R: Read>(r: R) -> Result<Vec<FrameRecord>, ReplayError> {
    let mut out: Vec<FrameRecord> = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = decode_record(&line, i + 1)?;
        if let Some(prev) = out.last() {
            if record.t < prev.t {
                return Err(ReplayError::NonMonotoneTimestamp { line: i + 1 });
            }
        }
        out.push(record);
    }
    Ok(out)
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<FrameRecord>, ReplayError> {
    read_log_from(File::open(path)?)
}

/// One obstacle-sensor frame before gaze is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleFrame {
    pub t: f64,
    pub ego: EgoState,
    pub obstacles: Vec<ObstacleTrack>,
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + (b - a) * w
}

/// Gaze at time `t` from a time-sorted stream: the exact sample when one
/// exists, otherwise linear interpolation between the bracketing samples
/// (direction re-normalized), or the single nearest sample at the ends.
/// `None` when the nearest sample is more than `max_skew` away.
pub fn gaze_at(stream: &[GazeSample], t: f64, max_skew: f64) -> Option<GazeSample> {
    let idx = stream.partition_point(|g| g.timestamp <= t);
    let before = idx.checked_sub(1).map(|i| &stream[i]);
    let after = stream.get(idx);
    let nearest = match (before, after) {
        (Some(b), Some(a)) => (t - b.timestamp).min(a.timestamp - t),
        (Some(b), None) => t - b.timestamp,
        (None, Some(a)) => a.timestamp - t,
        (None, None) => return None,
    };
    if nearest > max_skew {
        return None;
    }
    let mut out = match (before, after) {
        (Some(b), _) if b.timestamp == t => b.clone(),
        (Some(b), Some(a)) => {
            let w = (t - b.timestamp) / (a.timestamp - b.timestamp);
            let dir = b.gaze_dir_f.lerp(&a.gaze_dir_f, w);
            let dir = if dir.norm() > 1e-12 {
                dir.normalize()
            } else if w < 0.5 {
                b.gaze_dir_f
            } else {
                a.gaze_dir_f
            };
            let origin = b.gaze_origin_f.lerp(&a.gaze_origin_f, w);
            GazeSample {
                timestamp: t,
                head_pose_f: if w < 0.5 { b.head_pose_f } else { a.head_pose_f },
                gaze_origin_f: origin,
                gaze_dir_f: dir,
                eyelid_opening: lerp(b.eyelid_opening, a.eyelid_opening, w),
                pupil_diameter_mm: lerp(b.pupil_diameter_mm, a.pupil_diameter_mm, w),
                blink: b.blink || a.blink,
            }
        }
        (Some(b), None) => b.clone(),
        (None, Some(a)) => a.clone(),
        (None, None) => unreachable!(),
    };
    out.timestamp = t;
    Some(out)
}

/// Attaches gaze to every obstacle frame. Output timestamps are the
/// obstacle-frame timestamps.
pub fn synchronize(gaze_stream: &[GazeSample], obstacle_stream: &[ObstacleFrame], max_skew: f64) -> Vec<FrameRecord> {
    obstacle_stream
        .iter()
        .map(|f| FrameRecord {
            t: f.t,
            ego: f.ego,
            obstacles: f.obstacles.clone(),
            gaze: gaze_at(gaze_stream, f.t, max_skew),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn record(t: f64) -> FrameRecord {
        FrameRecord {
            t,
            ego: EgoState { speed: 12.5, yaw_rate: 0.01, timestamp: t },
            obstacles: vec![ObstacleTrack {
                id: "car-1".into(),
                class: ObstacleClass::Car,
                position_m: Vec3::new(30.1, -1.75, 0.75),
                velocity_m: Vec3::new(8.0, 0.1, 0.0),
                half_extents: Vec3::new(2.2, 0.9, 0.75),
                timestamp: t,
            }],
            gaze: Some(GazeSample::new(t, Vec3::new(0.1, 0.2, 0.7), Vec3::new(0.0, 0.6, 0.8))),
        }
    }

    #[test]
    fn round_trip_many_records() {
        let records: Vec<FrameRecord> = (0..200).map(|k| record(k as f64 / 20.0)).collect();
        let mut buf = Vec::new();
        write_log_to(&records, &mut buf).unwrap();
        let back = read_log_from(buf.as_slice()).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn wire_schema_fields() {
        let line = encode_record(&record(0.5)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["t"], 0.5);
        assert_eq!(v["ego"]["speed"], 12.5);
        assert_eq!(v["obstacles"][0]["class"], "car");
        assert_eq!(v["obstacles"][0]["half_extents"][0], 2.2);
        assert_eq!(v["gaze"]["eyelid"], 1.0);
        assert_eq!(v["gaze"]["blink"], false);
    }

    #[test]
    fn null_gaze_is_accepted() {
        let line = r#"{"t": 1.0, "ego": {"speed": 3, "yaw_rate": 0}, "obstacles": [], "gaze": null}"#;
        assert!(decode_record(line, 1).unwrap().gaze.is_none());
    }

    #[test]
    fn missing_t_reports_line() {
        let good = encode_record(&record(0.0)).unwrap();
        let bad = r#"{"ego": {"speed": 3, "yaw_rate": 0}, "obstacles": [], "gaze": null}"#;
        let text = format!("{good}\n{good}\n{bad}\n");
        match read_log_from(text.as_bytes()) {
            Err(ReplayError::MalformedLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backwards_time_is_rejected() {
        let text = format!(
            "{}\n{}\n",
            encode_record(&record(1.0)).unwrap(),
            encode_record(&record(0.5)).unwrap()
        );
        assert!(matches!(
            read_log_from(text.as_bytes()),
            Err(ReplayError::NonMonotoneTimestamp { line: 2 })
        ));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut r = record(0.0);
        r.obstacles.push(r.obstacles[0].clone());
        let line = encode_record(&r).unwrap();
        assert!(matches!(decode_record(&line, 4), Err(ReplayError::DuplicateObstacleId { line: 4, .. })));
    }

    #[test]
    fn non_finite_values_are_refused() {
        let mut r = record(0.0);
        r.ego.speed = f64::NAN;
        assert!(matches!(encode_record(&r), Err(ReplayError::NonFinite { .. })));
    }

    fn frame(t: f64) -> ObstacleFrame {
        ObstacleFrame { t, ego: EgoState { timestamp: t, ..Default::default() }, obstacles: Vec::new() }
    }

    #[test]
    fn synchronize_interpolates_midpoint() {
        let g0 = GazeSample::new(0.0, Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0));
        let g1 = GazeSample::new(0.1, Vec3::new(0.0, 0.2, 0.0), Vec3::new(0.0, 1.0, 0.0));
        let out = synchronize(&[g0, g1], &[frame(0.05)], DEFAULT_MAX_SKEW);
        let g = out[0].gaze.as_ref().unwrap();
        // midpoint of (1,0,0) and (0,1,0) is (0.5,0.5,0); renormalized: (1/√2, 1/√2, 0)
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(g.gaze_dir_f, Vec3::new(h, h, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(g.gaze_origin_f, Vec3::new(0.0, 0.1, 0.0), epsilon = 1e-12);
        assert_eq!(out[0].t, 0.05);
    }

    #[test]
    fn synchronize_passes_exact_match_through() {
        let g0 = GazeSample::new(0.0, Vec3::zeros(), Vec3::x());
        let g1 = GazeSample::new(0.1, Vec3::zeros(), Vec3::new(0.6, 0.8, 0.0));
        let out = synchronize(&[g0, g1.clone()], &[frame(0.1)], DEFAULT_MAX_SKEW);
        assert_eq!(out[0].gaze.as_ref(), Some(&g1));
    }

    #[test]
    fn synchronize_drops_stale_gaze() {
        let g = GazeSample::new(0.7, Vec3::zeros(), Vec3::x());
        let out = synchronize(&[g], &[frame(1.0)], DEFAULT_MAX_SKEW);
        assert!(out[0].gaze.is_none());
    }
}
