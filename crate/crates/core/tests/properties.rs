use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;

use daaria_core::attention::GazeSample;
use daaria_core::calibration::{register_kabsch, PointPairSet};
use daaria_core::geometry::{ray_aabb_intersect, Aabb3, CameraModel, Ray};
use daaria_core::perception::{EgoState, ObstacleClass, ObstacleTrack};
use daaria_core::replay::{decode_record, encode_record, synchronize, FrameRecord, ObstacleFrame};
use daaria_core::{RigidTransform, Vec3};

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn unit() -> impl Strategy<Value = Vec3> {
    vec3(1.0).prop_filter("non-degenerate", |v| v.norm() > 0.1).prop_map(|v| v.normalize())
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (unit(), -3.2..3.2f64, vec3(10.0)).prop_map(|(axis, angle, t)| {
        let r = Rotation3::from_axis_angle(&Unit::new_unchecked(axis), angle);
        RigidTransform::new(*r.matrix(), t).unwrap()
    })
}

fn rms(t: &RigidTransform, f: &[Vec3], m: &[Vec3]) -> f64 {
    (f.iter().zip(m).map(|(p, q)| (t.transform_point(p) - q).norm_squared()).sum::<f64>() / f.len() as f64).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn transforms_are_rigid(t in transform(), a in vec3(5.0), b in vec3(5.0)) {
        let d0 = (a - b).norm();
        let d1 = (t.transform_point(&a) - t.transform_point(&b)).norm();
        prop_assert!((d0 - d1).abs() < 1e-12 * (1.0 + d0));
        let back = t.inverse().transform_point(&t.transform_point(&a));
        prop_assert!((back - a).norm() < 1e-12 * (1.0 + a.norm() + t.translation().norm()));
        prop_assert!((t.rotation().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn composition_applies_right_to_left(a in transform(), b in transform(), p in vec3(5.0)) {
        let direct = a.transform_point(&b.transform_point(&p));
        let composed = a.compose(&b).transform_point(&p);
        prop_assert!((direct - composed).norm() < 1e-11 * (1.0 + direct.norm()));
    }

    #[test]
    fn backprojection_inverts_projection(
        x in -1.0..1.0f64, y in -0.6..0.6f64, z in 0.5..80.0f64, k1 in -0.2..0.2f64, k2 in -0.05..0.05f64,
    ) {
        let cam = CameraModel::new(500.0, 500.0, 320.0, 180.0, 640, 360).unwrap().with_distortion(k1, k2);
        let p = Vec3::new(x * z * 0.5, y * z * 0.5, z);
        let uv = cam.project(&p).unwrap();
        prop_assume!(cam.contains(&uv));
        let ray = cam.backproject(&uv).unwrap();
        let angle = ray.direction().cross(&p.normalize()).norm();
        prop_assert!(angle < 1e-9, "angle {angle}");
        prop_assert!(ray.direction().dot(&p) > 0.0);
    }

    #[test]
    fn ray_box_matches_marching(
        origin in vec3(10.0), center in vec3(10.0), half in (0.2..3.0f64, 0.2..3.0f64, 0.2..3.0f64),
        aim in vec3(4.0),
    ) {
        let b = Aabb3::new(center, Vec3::new(half.0, half.1, half.2)).unwrap();
        let dir = center + aim - origin;
        prop_assume!(dir.norm() > 1e-3);
        let ray = Ray::new(origin, dir).unwrap();
        let step = 1e-3;
        let inside = |p: &Vec3, tol: f64| (0..3).all(|i| (p[i] - center[i]).abs() <= b.half_extents()[i] + tol);
        let marched = (0..60_000).map(|k| k as f64 * step).find(|&t| inside(&ray.at(t), 0.0));
        match (marched, ray_aabb_intersect(&ray, &b)) {
            (Some(tm), Some(ts)) => prop_assert!(ts <= tm && tm - ts <= step + 1e-9, "slab {ts} march {tm}"),
            (Some(tm), None) => prop_assert!(false, "march hit at {tm}, slab missed"),
            // a grazing hit shorter than the marching step
            (None, Some(ts)) => prop_assert!(inside(&ray.at(ts), 1e-9)),
            (None, None) => {}
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kabsch_is_least_squares_optimal(
        truth in transform(), pts in prop::collection::vec(vec3(1.0), 6..20),
        noise in prop::collection::vec(vec3(0.02), 20), wiggle in transform(),
    ) {
        let pm: Vec<Vec3> = pts.iter().zip(&noise).map(|(p, n)| truth.transform_point(p) + n).collect();
        let est = register_kabsch(&PointPairSet::from_points(pts.clone(), pm.clone()).unwrap()).unwrap();
        let best = rms(&est.transform_f_to_m, &pts, &pm);
        prop_assert!((best - est.rms_residual).abs() < 1e-12);
        prop_assert!(best <= rms(&truth, &pts, &pm) + 1e-12);
        // a small perturbation of the estimate never does better
        let small = RigidTransform::from_axis_angle(*wiggle.rotation() * Vec3::x(), 1e-3, wiggle.translation() * 1e-4).unwrap();
        prop_assert!(best <= rms(&small.compose(&est.transform_f_to_m), &pts, &pm) + 1e-12);
    }

    #[test]
    fn residuals_are_invariant_to_a_common_motion(
        truth in transform(), g in transform(), pts in prop::collection::vec(vec3(1.0), 6..20),
        noise in prop::collection::vec(vec3(0.02), 20),
    ) {
        let pm: Vec<Vec3> = pts.iter().zip(&noise).map(|(p, n)| truth.transform_point(p) + n).collect();
        let moved: Vec<Vec3> = pm.iter().map(|q| g.transform_point(q)).collect();
        let a = register_kabsch(&PointPairSet::from_points(pts.clone(), pm).unwrap()).unwrap();
        let b = register_kabsch(&PointPairSet::from_points(pts.clone(), moved).unwrap()).unwrap();
        for (ra, rb) in a.per_point_residuals.iter().zip(&b.per_point_residuals) {
            prop_assert!((ra - rb).abs() < 1e-9);
        }
        let expected = g.compose(&a.transform_f_to_m);
        prop_assert!(b.transform_f_to_m.rotation_angle_to(&expected) < 1e-8);
        prop_assert!(b.transform_f_to_m.translation_distance_to(&expected) < 1e-8);
    }
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, -1.0..1.0f64, Just(0.0), Just(1e-300), Just(0.1 + 0.2)]
}

fn obstacle(i: usize) -> impl Strategy<Value = ObstacleTrack> {
    let class = prop::sample::select(vec![
        ObstacleClass::Pedestrian,
        ObstacleClass::Bicycle,
        ObstacleClass::Motorcycle,
        ObstacleClass::Car,
        ObstacleClass::Truck,
    ]);
    (class, [finite(), finite(), finite()], [finite(), finite(), finite()], (0.01..5.0f64, 0.01..5.0f64, 0.01..5.0f64))
        .prop_map(move |(class, p, v, h)| ObstacleTrack {
            id: format!("obs-{i}"),
            class,
            position_m: Vec3::from(p),
            velocity_m: Vec3::from(v),
            half_extents: Vec3::new(h.0, h.1, h.2),
            timestamp: 0.0,
        })
}

fn record() -> impl Strategy<Value = FrameRecord> {
    let obstacles = (0usize..4).prop_flat_map(|n| (0..n).map(obstacle).collect::<Vec<_>>());
    let gaze = prop::option::of((vec3(2.0), unit(), 0.0..1.0f64, 2.0..8.0f64, any::<bool>()).prop_map(
        |(o, d, lid, pupil, blink)| GazeSample {
            eyelid_opening: lid,
            pupil_diameter_mm: pupil,
            blink,
            ..GazeSample::new(0.0, o, d)
        },
    ));
    (0.0..1e4f64, 0.0..60.0f64, -1.0..1.0f64, obstacles, gaze).prop_map(|(t, speed, yaw, mut obstacles, gaze)| {
        for o in &mut obstacles {
            o.timestamp = t;
        }
        FrameRecord {
            t,
            ego: EgoState { speed, yaw_rate: yaw, timestamp: t },
            obstacles,
            gaze: gaze.map(|g| GazeSample { timestamp: t, ..g }),
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn log_lines_round_trip_exactly(r in record()) {
        let line = encode_record(&r).unwrap();
        prop_assert!(!line.contains('\n'));
        let back = decode_record(&line, 1).unwrap();
        prop_assert_eq!(back, r);
    }

    #[test]
    fn synchronized_gaze_has_unit_direction(
        dirs in prop::collection::vec(unit(), 2..40), gaze_rate in 20.0..90.0f64, frame_rate in 5.0..30.0f64,
    ) {
        let stream: Vec<GazeSample> = dirs
            .iter()
            .enumerate()
            .map(|(i, d)| GazeSample::new(i as f64 / gaze_rate, Vec3::new(0.0, 0.0, 1.2), *d))
            .collect();
        let end = (dirs.len() - 1) as f64 / gaze_rate;
        let frames: Vec<ObstacleFrame> = (0..)
            .map(|k| k as f64 / frame_rate)
            .take_while(|&t| t <= end + 0.2)
            .map(|t| ObstacleFrame { t, ego: EgoState::default(), obstacles: Vec::new() })
            .collect();
        let out = synchronize(&stream, &frames, 0.1);
        prop_assert_eq!(out.len(), frames.len());
        for (r, f) in out.iter().zip(&frames) {
            prop_assert_eq!(r.t, f.t);
            if let Some(g) = &r.gaze {
                prop_assert!((g.gaze_dir_f.norm() - 1.0).abs() < 1e-12);
                prop_assert_eq!(g.timestamp, f.t);
            } else {
                prop_assert!(f.t > end + 0.1 - 1e-12);
            }
        }
    }
}
