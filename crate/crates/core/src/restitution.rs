//! Monitoring views: a top-down bird view and an overlay on the scene
//! camera image, each showing obstacles and the driver's gaze.
//!
//! Colour code: pedestrians blue, vehicles green, gaze red.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraModel, Pixel, Ray, RigidTransform, Vec3};
use crate::metaphor::Rgb;
use crate::perception::{ObstacleClass, ObstacleTrack};

/// Camera-frame depth at which boxes are clipped.
pub const NEAR_PLANE: f64 = 0.05;
/// Radius of the gaze marker in the scene view (px).
pub const GAZE_CIRCLE_RADIUS: f64 = 6.0;
/// Far end of the gaze line when the ground hit is not visible (m).
const GAZE_LINE_LENGTH: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RestitutionError {
    #[error("bird-view extent must be positive, got {0}")]
    InvalidExtent(f64),
}

/// Scene camera intrinsics together with its mounting pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneCamera {
    pub intrinsics: CameraModel,
    /// Maps vehicle-frame points into the camera frame.
    pub pose_m_to_s: RigidTransform,
}

impl SceneCamera {
    /// A camera at `mount_m`, looking straight ahead along +x.
    pub fn forward_looking(intrinsics: CameraModel, mount_m: Vec3) -> Self {
        Self {
            intrinsics,
            pose_m_to_s: RigidTransform::vehicle_to_camera_axes()
                .compose(&RigidTransform::from_translation(-mount_m)),
        }
    }
}

impl Default for SceneCamera {
    fn default() -> Self {
        let intrinsics = CameraModel::new(500.0, 500.0, 320.0, 180.0, 640, 360).expect("valid default camera");
        Self::forward_looking(intrinsics, Vec3::new(0.5, 0.0, 1.4))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Box2d { min: [f64; 2], max: [f64; 2] },
    Line2d { from: [f64; 2], to: [f64; 2] },
    Circle2d { center: [f64; 2], radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayPrimitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub color: Rgb,
    pub tag: String,
}

pub const GAZE_TAG: &str = "gaze";

pub fn class_color(class: ObstacleClass) -> Rgb {
    if class.is_pedestrian() {
        Rgb::BLUE
    } else {
        Rgb::GREEN
    }
}

/// Top-down orthographic view in vehicle meters (x forward, y left).
/// Obstacles outside `±extent_m` are omitted; the gaze is drawn from the
/// ego origin along the ground projection of the gaze ray.
pub fn bird_view(
    obstacles: &[ObstacleTrack],
    gaze_ray_m: Option<&Ray>,
    extent_m: f64,
) -> Result<Vec<OverlayPrimitive>, RestitutionError> {
    if !(extent_m > 0.0) || !extent_m.is_finite() {
        return Err(RestitutionError::InvalidExtent(extent_m));
    }
    let mut out = Vec::with_capacity(obstacles.len() + 1);
    for o in obstacles {
        let (p, h) = (o.position_m, o.half_extents);
        if p.x.abs() > extent_m || p.y.abs() > extent_m {
            continue;
        }
        out.push(OverlayPrimitive {
            shape: Shape::Box2d {
                min: [p.x - h.x, p.y - h.y],
                max: [p.x + h.x, p.y + h.y],
            },
            color: class_color(o.class),
            tag: o.id.clone(),
        });
    }
    if let Some(ray) = gaze_ray_m {
        let d = ray.direction();
        let ground = (d.x * d.x + d.y * d.y).sqrt();
        let shape = if ground > 1e-9 {
            Shape::Line2d {
                from: [0.0, 0.0],
                to: [d.x / ground * extent_m, d.y / ground * extent_m],
            }
        } else {
            Shape::Circle2d { center: [0.0, 0.0], radius: 0.5 }
        };
        out.push(OverlayPrimitive {
            shape,
            color: Rgb::RED,
            tag: GAZE_TAG.into(),
        });
    }
    Ok(out)
}

/// Clips a segment to `z ≥ NEAR_PLANE`; `None` when fully behind.
fn clip_segment(a: Vec3, b: Vec3) -> Option<(Vec3, Vec3)> {
    match (a.z >= NEAR_PLANE, b.z >= NEAR_PLANE) {
        (true, true) => Some((a, b)),
        (false, false) => None,
        (a_in, _) => {
            let s = (NEAR_PLANE - a.z) / (b.z - a.z);
            let mut cut = a + (b - a) * s;
            cut.z = NEAR_PLANE;
            if a_in {
                Some((a, cut))
            } else {
                Some((cut, b))
            }
        }
    }
}

/// Pixel-aligned hull of the visible part of an obstacle box, clipped to the image.
fn obstacle_box(cam: &SceneCamera, o: &ObstacleTrack) -> Option<([f64; 2], [f64; 2])> {
    let bbox = o.bbox().ok()?;
    let corners = bbox.corners().map(|c| cam.pose_m_to_s.transform_point(&c));
    let mut visible: Vec<Vec3> = corners.iter().copied().filter(|c| c.z >= NEAR_PLANE).collect();
    if visible.is_empty() {
        return None;
    }
    for (i, j) in crate::geometry::Aabb3::EDGES {
        let (a, b) = (corners[i], corners[j]);
        if (a.z >= NEAR_PLANE) != (b.z >= NEAR_PLANE) {
            if let Some((p, q)) = clip_segment(a, b) {
                visible.push(if p.z == NEAR_PLANE { p } else { q });
            }
        }
    }
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in &visible {
        let uv = cam.intrinsics.project(p).ok()?;
        min = [min[0].min(uv.x), min[1].min(uv.y)];
        max = [max[0].max(uv.x), max[1].max(uv.y)];
    }
    let (w, h) = (cam.intrinsics.width as f64, cam.intrinsics.height as f64);
    let min = [min[0].max(0.0), min[1].max(0.0)];
    let max = [max[0].min(w), max[1].min(h)];
    if min[0] >= max[0] || min[1] >= max[1] {
        return None;
    }
    Some((min, max))
}

/// Where the gaze meets the ground plane `z = 0`, if ahead of the eye.
pub fn gaze_ground_hit(ray: &Ray) -> Option<Vec3> {
    let (o, d) = (ray.origin(), ray.direction());
    if d.z >= 0.0 || o.z <= 0.0 {
        return None;
    }
    Some(ray.at(-o.z / d.z))
}

fn gaze_primitive(cam: &SceneCamera, ray: &Ray) -> Option<Shape> {
    if let Some(hit) = gaze_ground_hit(ray) {
        let p = cam.pose_m_to_s.transform_point(&hit);
        if p.z >= NEAR_PLANE {
            if let Ok(uv) = cam.intrinsics.project(&p) {
                if cam.intrinsics.contains(&uv) {
                    return Some(Shape::Circle2d {
                        center: [uv.x, uv.y],
                        radius: GAZE_CIRCLE_RADIUS,
                    });
                }
            }
        }
    }
    let near = ray.at(0.0);
    let far = match gaze_ground_hit(ray) {
        Some(hit) => hit,
        None => ray.at(GAZE_LINE_LENGTH),
    };
    let (a, b) = clip_segment(
        cam.pose_m_to_s.transform_point(&near),
        cam.pose_m_to_s.transform_point(&far),
    )?;
    let ua: Pixel = cam.intrinsics.project(&a).ok()?;
    let ub: Pixel = cam.intrinsics.project(&b).ok()?;
    Some(Shape::Line2d {
        from: [ua.x, ua.y],
        to: [ub.x, ub.y],
    })
}

/// Obstacle boxes and gaze marker drawn over the scene camera image.
pub fn scene_overlay(
    cam: &SceneCamera,
    obstacles: &[ObstacleTrack],
    gaze_ray_m: Option<&Ray>,
) -> Vec<OverlayPrimitive> {
    let mut out = Vec::with_capacity(obstacles.len() + 1);
    for o in obstacles {
        if let Some((min, max)) = obstacle_box(cam, o) {
            out.push(OverlayPrimitive {
                shape: Shape::Box2d { min, max },
                color: class_color(o.class),
                tag: o.id.clone(),
            });
        }
    }
    if let Some(shape) = gaze_ray_m.and_then(|r| gaze_primitive(cam, r)) {
        out.push(OverlayPrimitive {
            shape,
            color: Rgb::RED,
            tag: GAZE_TAG.into(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn track(id: &str, class: ObstacleClass, pos: [f64; 3], half: f64) -> ObstacleTrack {
        ObstacleTrack {
            id: id.into(),
            class,
            position_m: Vec3::from(pos),
            velocity_m: Vec3::zeros(),
            half_extents: Vec3::repeat(half),
            timestamp: 0.0,
        }
    }

    fn centered_cam() -> SceneCamera {
        let k = CameraModel::new(1000.0, 1000.0, 640.0, 360.0, 1280, 720).unwrap();
        SceneCamera::forward_looking(k, Vec3::zeros())
    }

    #[test]
    fn bird_view_examples() {
        let ped = track("p", ObstacleClass::Pedestrian, [10.0, 0.0, 0.0], 0.5);
        let prims = bird_view(&[ped], None, 50.0).unwrap();
        assert_eq!(prims.len(), 1);
        assert_eq!(prims[0].color, Rgb::BLUE);
        assert_eq!(prims[0].shape, Shape::Box2d { min: [9.5, -0.5], max: [10.5, 0.5] });

        let ahead = Ray::new(Vec3::new(0.0, 0.0, 1.2), Vec3::x()).unwrap();
        let prims = bird_view(&[], Some(&ahead), 50.0).unwrap();
        assert_eq!(prims.len(), 1);
        assert_eq!(prims[0].color, Rgb::RED);
        assert_eq!(prims[0].shape, Shape::Line2d { from: [0.0, 0.0], to: [50.0, 0.0] });

        let car = track("c", ObstacleClass::Car, [20.0, 5.0, 0.0], 1.0);
        let prims = bird_view(&[car], None, 50.0).unwrap();
        assert_eq!(prims[0].color, Rgb::GREEN);
        assert_eq!(prims[0].shape, Shape::Box2d { min: [19.0, 4.0], max: [21.0, 6.0] });
    }

    #[test]
    fn bird_view_rejects_bad_extent() {
        assert_eq!(bird_view(&[], None, 0.0), Err(RestitutionError::InvalidExtent(0.0)));
    }

    #[test]
    fn scene_box_on_axis() {
        // 1 m cube at 10 m: near face at z = 9.5, width 1000 * 1 / 9.5 px
        let cube = track("c", ObstacleClass::Car, [10.0, 0.0, 0.0], 0.5);
        let prims = scene_overlay(&centered_cam(), &[cube], None);
        let Shape::Box2d { min, max } = prims[0].shape else { panic!() };
        let expected = 1000.0 / 9.5;
        assert_abs_diff_eq!(max[0] - min[0], expected, epsilon = 1e-9);
        assert_abs_diff_eq!(0.5 * (min[0] + max[0]), 640.0, epsilon = 1e-9);
        assert_abs_diff_eq!(0.5 * (min[1] + max[1]), 360.0, epsilon = 1e-9);
    }

    #[test]
    fn obstacle_behind_camera_is_omitted() {
        let behind = track("b", ObstacleClass::Car, [-10.0, 0.0, 0.0], 0.5);
        assert!(scene_overlay(&centered_cam(), &[behind], None).is_empty());
    }

    #[test]
    fn straddling_box_is_clipped() {
        // box spanning the camera plane: visible part starts at the near plane
        let b = track("s", ObstacleClass::Truck, [1.0, 0.0, 0.0], 2.0);
        let prims = scene_overlay(&centered_cam(), &[b], None);
        let Shape::Box2d { min, max } = prims[0].shape else { panic!() };
        assert_eq!(min, [0.0, 0.0]);
        assert_eq!(max, [1280.0, 720.0]);
    }

    #[test]
    fn gaze_down_the_road_is_a_circle() {
        let cam = SceneCamera::default();
        let ray = Ray::new(Vec3::new(-0.8, 0.0, 1.2), Vec3::new(1.0, 0.0, -0.05)).unwrap();
        let prims = scene_overlay(&cam, &[], Some(&ray));
        // ground hit by hand: t = 1.2 / 0.05 along (1, 0, -0.05) -> x = -0.8 + 24 = 23.2.
        // camera at (0.5, 0, 1.4): depth 22.7, height below axis 1.4, so v = 180 + 500 * 1.4 / 22.7.
        let Shape::Circle2d { center, radius } = prims[0].shape else { panic!("{prims:?}") };
        assert_abs_diff_eq!(center[0], 320.0, epsilon = 1e-9);
        assert_abs_diff_eq!(center[1], 180.0 + 500.0 * 1.4 / 22.7, epsilon = 1e-9);
        assert_eq!(radius, GAZE_CIRCLE_RADIUS);
        assert_eq!(prims[0].color, Rgb::RED);
    }

    #[test]
    fn gaze_above_horizon_is_a_line() {
        let cam = SceneCamera::default();
        let ray = Ray::new(Vec3::new(-0.8, 0.0, 1.2), Vec3::new(1.0, 0.3, 0.02)).unwrap();
        let prims = scene_overlay(&cam, &[], Some(&ray));
        assert!(matches!(prims[0].shape, Shape::Line2d { .. }));
        assert_eq!(prims[0].tag, GAZE_TAG);
    }

    #[test]
    fn primitive_json_shape() {
        let p = OverlayPrimitive {
            shape: Shape::Circle2d { center: [1.0, 2.0], radius: 3.0 },
            color: Rgb::RED,
            tag: "gaze".into(),
        };
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["kind"], "circle2d");
        assert_eq!(v["color"], serde_json::json!([255, 0, 0]));
        let back: OverlayPrimitive = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
