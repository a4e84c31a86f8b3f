//! Extrinsic calibration between the gaze tracker frame `F` and the forward
//! camera frame `M`.
//!
//! The two sensors look in opposite directions and share no image content.
//! A person in the driver seat fixates reference points of a planar target
//! that the forward camera observes, while a forehead-mounted laser range
//! finder measures the distance to the same point. Each fixation gives one
//! 3D point in `F` (eye origin plus gaze ray scaled by the measured distance)
//! whose counterpart in `M` follows from the target pose. A rigid
//! registration of the paired points yields `T_F→M`.
//!
//! The eye position reported by the tracker is used as the laser origin.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    axis_angle_matrix, nearest_rotation, perturb_direction, CameraModel, GeometryError, Mat3, Pixel,
    RigidTransform, Vec3,
};

/// Minimum number of distinct target points for the gaze/laser procedure.
pub const DEFAULT_MIN_TARGET_POINTS: usize = 4;
/// Recommended number of fixations per calibration session.
pub const RECOMMENDED_TARGET_POINTS: usize = 8;

const UNIT_TOL: f64 = 1e-6;
const COLLINEAR_RATIO: f64 = 1e-10;
const PLANAR_RATIO: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("gaze direction is not unit length (|v| = {0})")]
    NonUnitDirection(f64),
    #[error("laser distance must be positive (got {0})")]
    NonPositiveDistance(f64),
    #[error("point lists have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("target lies behind the camera")]
    BehindCamera,
    #[error("target points are not coplanar")]
    NonPlanarTarget,
    #[error("sample references unknown target point {0:?}")]
    UnknownTargetPoint(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One fixation of the calibration procedure, expressed in the gaze tracker frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeLaserSample {
    #[serde(rename = "id")]
    pub target_point_id: String,
    #[serde(rename = "gaze_origin", with = "vec3_array")]
    pub gaze_origin_f: Vec3,
    #[serde(rename = "gaze_dir", with = "vec3_array")]
    pub gaze_dir_f: Vec3,
    #[serde(rename = "laser_distance_m")]
    pub laser_distance: f64,
}

/// Id-aligned corresponding points in the two frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPairSet {
    points_f: Vec<Vec3>,
    points_m: Vec<Vec3>,
    ids: Vec<String>,
}

impl PointPairSet {
    pub fn new(points_f: Vec<Vec3>, points_m: Vec<Vec3>, ids: Vec<String>) -> Result<Self, CalibrationError> {
        if points_f.len() != points_m.len() {
            return Err(CalibrationError::LengthMismatch(points_f.len(), points_m.len()));
        }
        if ids.len() != points_f.len() {
            return Err(CalibrationError::LengthMismatch(points_f.len(), ids.len()));
        }
        if points_f.len() < 3 {
            return Err(CalibrationError::TooFewPoints { needed: 3, got: points_f.len() });
        }
        Ok(Self { points_f, points_m, ids })
    }

    /// Pairs with generated ids `"0"`, `"1"`, ...
    pub fn from_points(points_f: Vec<Vec3>, points_m: Vec<Vec3>) -> Result<Self, CalibrationError> {
        let ids = (0..points_f.len()).map(|i| i.to_string()).collect();
        Self::new(points_f, points_m, ids)
    }

    pub fn points_f(&self) -> &[Vec3] {
        &self.points_f
    }

    pub fn points_m(&self) -> &[Vec3] {
        &self.points_m
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.points_f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points_f.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub transform_f_to_m: RigidTransform,
    pub rms_residual: f64,
    pub per_point_residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Pose of a planar target relative to a camera, with its reprojection error.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPose {
    pub target_to_camera: RigidTransform,
    pub reprojection_rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Convergence threshold on the change of RMS residual between iterations (m).
    pub rms_change_tol: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            rms_change_tol: 1e-9,
        }
    }
}

/// Calibration target: its pose in the forward camera frame and the
/// reference points in target coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub pose_m: RigidTransform,
    #[serde(with = "point_map")]
    pub points: BTreeMap<String, Vec3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcedureOptions {
    pub min_target_points: usize,
}

impl Default for ProcedureOptions {
    fn default() -> Self {
        Self {
            min_target_points: DEFAULT_MIN_TARGET_POINTS,
        }
    }
}

/// Evaluates the gaze ray at the laser-measured distance.
pub fn gaze_laser_to_point(s: &GazeLaserSample) -> Result<Vec3, CalibrationError> {
    let n = s.gaze_dir_f.norm();
    if !((n - 1.0).abs() <= UNIT_TOL) {
        return Err(CalibrationError::NonUnitDirection(n));
    }
    if !(s.laser_distance > 0.0) || !s.laser_distance.is_finite() {
        return Err(CalibrationError::NonPositiveDistance(s.laser_distance));
    }
    Ok(s.gaze_origin_f + s.gaze_dir_f * s.laser_distance)
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / points.len() as f64
}

/// Scatter matrix eigenvalues in descending order, with matching eigenvectors.
fn principal_axes(points: &[Vec3]) -> ([f64; 3], [Vec3; 3]) {
    let c = centroid(points);
    let scatter = points
        .iter()
        .fold(Mat3::zeros(), |acc, p| acc + (p - c) * (p - c).transpose());
    let eig = scatter.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.map(|i| eig.eigenvalues[i].max(0.0));
    let vecs = order.map(|i| eig.eigenvectors.column(i).into_owned());
    (vals, vecs)
}

fn is_collinear(points: &[Vec3]) -> bool {
    let (vals, _) = principal_axes(points);
    vals[0] == 0.0 || vals[1] <= COLLINEAR_RATIO * vals[0]
}

fn residuals(t: &RigidTransform, from: &[Vec3], to: &[Vec3]) -> (Vec<f64>, f64) {
    let res: Vec<f64> = from
        .iter()
        .zip(to)
        .map(|(f, m)| (t.transform_point(f) - m).norm())
        .collect();
    let rms = (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt();
    (res, rms)
}

/// Closed-form least-squares rigid registration of corresponded points.
pub fn register_kabsch(pairs: &PointPairSet) -> Result<RegistrationResult, CalibrationError> {
    let t = kabsch(&pairs.points_f, &pairs.points_m)?;
    let (per_point_residuals, rms_residual) = residuals(&t, &pairs.points_f, &pairs.points_m);
    Ok(RegistrationResult {
        transform_f_to_m: t,
        rms_residual,
        per_point_residuals,
        iterations: 1,
        converged: true,
    })
}

fn kabsch(from: &[Vec3], to: &[Vec3]) -> Result<RigidTransform, CalibrationError> {
    if from.len() < 3 {
        return Err(CalibrationError::TooFewPoints { needed: 3, got: from.len() });
    }
    if from.len() != to.len() {
        return Err(CalibrationError::LengthMismatch(from.len(), to.len()));
    }
    if is_collinear(from) {
        return Err(CalibrationError::DegenerateConfiguration("source points are collinear"));
    }
    let cf = centroid(from);
    let cm = centroid(to);
    let h = from
        .iter()
        .zip(to)
        .fold(Mat3::zeros(), |acc, (f, m)| acc + (f - cf) * (m - cm).transpose());
    let svd = h.svd(true, true);
    let u = svd.u.ok_or(CalibrationError::DegenerateConfiguration("svd failed"))?;
    let v = svd
        .v_t
        .ok_or(CalibrationError::DegenerateConfiguration("svd failed"))?
        .transpose();
    let mut d = Mat3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        // reflection: flip the direction of the smallest singular value
        let smallest = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(2);
        d[(smallest, smallest)] = -1.0;
    }
    let r = v * d * u.transpose();
    Ok(RigidTransform::from_parts_unchecked(r, cm - r * cf))
}

fn nearest_index(p: &Vec3, cloud: &[Vec3]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, q) in cloud.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Point-to-point ICP with exhaustive nearest-neighbour correspondences.
pub fn register_icp(
    points_f: &[Vec3],
    points_m: &[Vec3],
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<RegistrationResult, CalibrationError> {
    let n = points_f.len().min(points_m.len());
    if n < 3 {
        return Err(CalibrationError::TooFewPoints { needed: 3, got: n });
    }
    let matched = |t: &RigidTransform| -> Vec<Vec3> {
        points_f
            .iter()
            .map(|p| points_m[nearest_index(&t.transform_point(p), points_m)])
            .collect()
    };

    let mut current = *init;
    let mut prev_rms = residuals(&current, points_f, &matched(&current)).1;
    let mut iterations = 0;
    let mut converged = false;
    let mut last = (Vec::new(), prev_rms);
    while iterations < params.max_iterations {
        iterations += 1;
        let targets = matched(&current);
        current = kabsch(points_f, &targets)?;
        last = residuals(&current, points_f, &targets);
        if (prev_rms - last.1).abs() < params.rms_change_tol {
            converged = true;
            break;
        }
        prev_rms = last.1;
    }
    Ok(RegistrationResult {
        transform_f_to_m: current,
        rms_residual: last.1,
        per_point_residuals: last.0,
        iterations,
        converged,
    })
}

/// Builds id-matched point pairs from the fixation samples and the target
/// geometry, then registers them.
pub fn build_point_pairs(
    samples: &[GazeLaserSample],
    target: &CalibrationTarget,
    options: &ProcedureOptions,
) -> Result<PointPairSet, CalibrationError> {
    let distinct: BTreeSet<&str> = samples.iter().map(|s| s.target_point_id.as_str()).collect();
    let needed = options.min_target_points.max(3);
    if distinct.len() < needed {
        return Err(CalibrationError::TooFewPoints { needed, got: distinct.len() });
    }
    let mut points_f = Vec::with_capacity(samples.len());
    let mut points_m = Vec::with_capacity(samples.len());
    let mut ids = Vec::with_capacity(samples.len());
    for s in samples {
        let q = target
            .points
            .get(&s.target_point_id)
            .ok_or_else(|| CalibrationError::UnknownTargetPoint(s.target_point_id.clone()))?;
        points_f.push(gaze_laser_to_point(s)?);
        points_m.push(target.pose_m.transform_point(q));
        ids.push(s.target_point_id.clone());
    }
    PointPairSet::new(points_f, points_m, ids)
}

pub fn run_calibration_procedure(
    samples: &[GazeLaserSample],
    target: &CalibrationTarget,
    options: &ProcedureOptions,
) -> Result<RegistrationResult, CalibrationError> {
    register_kabsch(&build_point_pairs(samples, target, options)?)
}

/// Similarity transform moving a 2D point set to zero mean and mean
/// distance √2 from the origin.
fn hartley(points: &[(f64, f64)]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(ax, ay), (x, y)| (ax + x / n, ay + y / n));
    let mean_dist = points
        .iter()
        .map(|(x, y)| ((x - mx).powi(2) + (y - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

fn apply_h(h: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let p = h * Vector3::new(x, y, 1.0);
    (p.x / p.z, p.y / p.z)
}

/// Normalized DLT homography mapping `src` onto `dst`.
fn homography_dlt(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<Matrix3<f64>, CalibrationError> {
    let ts = hartley(src);
    let td = hartley(dst);
    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let (x, y) = apply_h(&ts, s.0, s.1);
        let (u, v) = apply_h(&td, d.0, d.1);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or(CalibrationError::DegenerateConfiguration("svd failed"))?;
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(8);
    let h = v_t.row(k);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or(CalibrationError::DegenerateConfiguration("singular normalization"))?;
    Ok(td_inv * hn * ts)
}

fn reprojection_rms(
    cam: &CameraModel,
    pose: &RigidTransform,
    target_pts: &[Vec3],
    image_pts: &[Pixel],
) -> Result<f64, CalibrationError> {
    let mut sum = 0.0;
    for (p, uv) in target_pts.iter().zip(image_pts) {
        let pc = pose.transform_point(p);
        if pc.z <= 0.0 {
            return Err(CalibrationError::BehindCamera);
        }
        sum += (cam.project(&pc)? - uv).norm_squared();
    }
    Ok((sum / target_pts.len() as f64).sqrt())
}

fn reprojection_vector(
    cam: &CameraModel,
    rotation: &Mat3,
    translation: &Vec3,
    target_pts: &[Vec3],
    image_pts: &[Pixel],
) -> Option<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * target_pts.len());
    for (p, uv) in target_pts.iter().zip(image_pts) {
        let pc = rotation * p + translation;
        let proj = cam.project(&pc).ok()?;
        out.push(proj.x - uv.x);
        out.push(proj.y - uv.y);
    }
    Some(out)
}

/// Gauss-Newton on the pixel reprojection error, with a left-multiplied
/// rotation increment and a numerical Jacobian.
fn refine_pose(
    cam: &CameraModel,
    pose: RigidTransform,
    target_pts: &[Vec3],
    image_pts: &[Pixel],
) -> RigidTransform {
    const STEP: f64 = 1e-7;
    let mut r = *pose.rotation();
    let mut t = *pose.translation();
    let cost = |r: &Mat3, t: &Vec3| {
        reprojection_vector(cam, r, t, target_pts, image_pts)
            .map(|e| e.iter().map(|v| v * v).sum::<f64>())
            .unwrap_or(f64::INFINITY)
    };
    let perturbed = |r: &Mat3, t: &Vec3, delta: &[f64; 6]| {
        let w = Vec3::new(delta[0], delta[1], delta[2]);
        let angle = w.norm();
        let dr = if angle > 0.0 { axis_angle_matrix(&(w / angle), angle) } else { Mat3::identity() };
        (dr * r, t + Vec3::new(delta[3], delta[4], delta[5]))
    };
    let mut current = cost(&r, &t);
    for _ in 0..10 {
        if current < 1e-24 {
            break;
        }
        let Some(e0) = reprojection_vector(cam, &r, &t, target_pts, image_pts) else {
            break;
        };
        let mut jac = DMatrix::<f64>::zeros(e0.len(), 6);
        for k in 0..6 {
            let mut d = [0.0; 6];
            d[k] = STEP;
            let (rp, tp) = perturbed(&r, &t, &d);
            d[k] = -STEP;
            let (rm, tm) = perturbed(&r, &t, &d);
            let (Some(ep), Some(em)) = (
                reprojection_vector(cam, &rp, &tp, target_pts, image_pts),
                reprojection_vector(cam, &rm, &tm, target_pts, image_pts),
            ) else {
                return RigidTransform::from_parts_unchecked(r, t);
            };
            for i in 0..e0.len() {
                jac[(i, k)] = (ep[i] - em[i]) / (2.0 * STEP);
            }
        }
        let e = DMatrix::from_column_slice(e0.len(), 1, &e0);
        let jt = jac.transpose();
        let Some(step) = (&jt * &jac).lu().solve(&(-(jt * e))) else {
            break;
        };
        let delta = [step[0], step[1], step[2], step[3], step[4], step[5]];
        let (rn, tn) = perturbed(&r, &t, &delta);
        let rn = nearest_rotation(&rn);
        let next = cost(&rn, &tn);
        if next >= current {
            break;
        }
        r = rn;
        t = tn;
        current = next;
    }
    RigidTransform::from_parts_unchecked(r, t)
}

/// Pose of a planar target (target → camera) from at least four point
/// observations: homography by normalized DLT, decomposition with column
/// orthonormalization, then reprojection-error refinement.
pub fn planar_target_pose(
    cam: &CameraModel,
    image_pts: &[Pixel],
    target_pts: &[Vec3],
) -> Result<TargetPose, CalibrationError> {
    if image_pts.len() != target_pts.len() {
        return Err(CalibrationError::LengthMismatch(image_pts.len(), target_pts.len()));
    }
    if target_pts.len() < 4 {
        return Err(CalibrationError::TooFewPoints { needed: 4, got: target_pts.len() });
    }
    let (vals, axes) = principal_axes(target_pts);
    if vals[0] == 0.0 || vals[1] <= COLLINEAR_RATIO * vals[0] {
        return Err(CalibrationError::DegenerateConfiguration("target points are collinear"));
    }
    if vals[2] > PLANAR_RATIO * PLANAR_RATIO * vals[0] {
        return Err(CalibrationError::NonPlanarTarget);
    }
    // Plane frame: origin at the centroid, z along the plane normal.
    let c = centroid(target_pts);
    let e1 = axes[0];
    let e2 = axes[2].cross(&e1).normalize();
    let n = e1.cross(&e2);
    let basis = Mat3::from_columns(&[e1, e2, n]);
    let plane_to_target = RigidTransform::from_parts_unchecked(basis, c);

    let plane: Vec<(f64, f64)> = target_pts
        .iter()
        .map(|p| ((p - c).dot(&e1), (p - c).dot(&e2)))
        .collect();
    let normalized: Vec<(f64, f64)> = image_pts.iter().map(|uv| cam.normalize_pixel(uv)).collect();
    let h = homography_dlt(&plane, &normalized)?;

    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let norm = 0.5 * (h1.norm() + h2.norm());
    if norm == 0.0 {
        return Err(CalibrationError::DegenerateConfiguration("degenerate homography"));
    }
    let mut lambda = 1.0 / norm;
    if h3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let r = nearest_rotation(&Mat3::from_columns(&[r1, r2, r1.cross(&r2)]));
    let plane_to_camera = RigidTransform::from_parts_unchecked(r, h3 * lambda);

    let plane_pts: Vec<Vec3> = plane.iter().map(|(a, b)| Vec3::new(*a, *b, 0.0)).collect();
    if plane_pts.iter().any(|p| plane_to_camera.transform_point(p).z <= 0.0) {
        return Err(CalibrationError::BehindCamera);
    }
    let plane_to_camera = refine_pose(cam, plane_to_camera, &plane_pts, image_pts);
    let target_to_camera = plane_to_camera.compose(&plane_to_target.inverse());
    let reprojection_rms = reprojection_rms(cam, &target_to_camera, target_pts, image_pts)?;
    Ok(TargetPose {
        target_to_camera,
        reprojection_rms,
    })
}

/// Geometry of a synthetic calibration bench used for Monte-Carlo studies.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRig {
    /// Driver eye position in the forward camera frame.
    pub eye_m: Vec3,
    pub target: CalibrationTarget,
}

impl Default for SyntheticRig {
    /// A 6×6 grid, 2.0 m × 1.2 m, standing 4 m ahead of the vehicle,
    /// viewed from a driver eye 1.2 m above the ground.
    fn default() -> Self {
        // target x → vehicle right, target y → vehicle up, normal toward the car
        let rotation = Mat3::from_columns(&[-Vec3::y(), Vec3::z(), -Vec3::x()]);
        let pose_m = RigidTransform::from_parts_unchecked(rotation, Vec3::new(4.0, 0.4, 1.2));
        let mut points = BTreeMap::new();
        for i in 0..6 {
            for j in 0..6 {
                let a = -1.0 + 0.4 * i as f64;
                let b = -0.6 + 0.24 * j as f64;
                points.insert(format!("P{i}{j}"), Vec3::new(a, b, 0.0));
            }
        }
        Self {
            eye_m: Vec3::new(-0.8, 0.4, 1.2),
            target: CalibrationTarget { pose_m, points },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleNoise {
    pub gaze_sigma_rad: f64,
    pub distance_sigma_m: f64,
}

impl SyntheticRig {
    /// Simulates `n` fixations on distinct, randomly chosen target points.
    pub fn synthesize_samples<R: Rng>(
        &self,
        truth_f_to_m: &RigidTransform,
        n: usize,
        noise: &SampleNoise,
        rng: &mut R,
    ) -> Vec<GazeLaserSample> {
        let ids: Vec<&String> = self.target.points.keys().collect();
        let m_to_f = truth_f_to_m.inverse();
        let eye_f = m_to_f.transform_point(&self.eye_m);
        let chosen = rand::seq::index::sample(rng, ids.len(), n.min(ids.len()));
        let mut out = Vec::with_capacity(n);
        for idx in chosen.iter() {
            let id = ids[idx];
            let q_m = self.target.pose_m.transform_point(&self.target.points[id]);
            let offset = q_m - self.eye_m;
            let dir_f = m_to_f.transform_vector(&offset.normalize());
            let angle: f64 = rng.sample::<f64, _>(StandardNormal) * noise.gaze_sigma_rad;
            let azimuth = rng.random::<f64>() * std::f64::consts::TAU;
            let dist_noise: f64 = rng.sample::<f64, _>(StandardNormal) * noise.distance_sigma_m;
            out.push(GazeLaserSample {
                target_point_id: id.clone(),
                gaze_origin_f: eye_f,
                gaze_dir_f: perturb_direction(&dir_f, angle, azimuth),
                laser_distance: offset.norm() + dist_noise,
            });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyConfig {
    pub samples_per_trial: usize,
    pub trials: usize,
    pub noise: SampleNoise,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorQuantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
}

impl ErrorQuantiles {
    pub fn from_values(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| quantile_sorted(&v, p);
        Self {
            min: q(0.0),
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            q95: q(0.95),
            max: q(1.0),
        }
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub samples_per_trial: usize,
    pub trials: usize,
    pub failed_trials: usize,
    pub rotation_error_rad: ErrorQuantiles,
    pub translation_error_m: ErrorQuantiles,
}

/// Monte-Carlo accuracy study of the gaze/laser procedure.
pub fn monte_carlo_study(rig: &SyntheticRig, truth_f_to_m: &RigidTransform, cfg: &StudyConfig) -> StudyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let options = ProcedureOptions {
        min_target_points: cfg.samples_per_trial.min(DEFAULT_MIN_TARGET_POINTS).max(3),
    };
    let mut rot = Vec::with_capacity(cfg.trials);
    let mut trans = Vec::with_capacity(cfg.trials);
    let mut failed = 0;
    for _ in 0..cfg.trials {
        let samples = rig.synthesize_samples(truth_f_to_m, cfg.samples_per_trial, &cfg.noise, &mut rng);
        match run_calibration_procedure(&samples, &rig.target, &options) {
            Ok(res) => {
                rot.push(res.transform_f_to_m.rotation_angle_to(truth_f_to_m));
                trans.push(res.transform_f_to_m.translation_distance_to(truth_f_to_m));
            }
            Err(_) => failed += 1,
        }
    }
    StudyResult {
        samples_per_trial: cfg.samples_per_trial,
        trials: cfg.trials,
        failed_trials: failed,
        rotation_error_rad: ErrorQuantiles::from_values(&rot),
        translation_error_m: ErrorQuantiles::from_values(&trans),
    }
}

/// On-disk calibration result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    #[serde(flatten)]
    pub transform_f_to_m: RigidTransform,
    #[serde(default)]
    pub rms: f64,
    #[serde(default)]
    pub residuals: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_camera: Option<crate::restitution::SceneCamera>,
}

impl From<&RegistrationResult> for CalibrationFile {
    fn from(r: &RegistrationResult) -> Self {
        Self {
            transform_f_to_m: r.transform_f_to_m,
            rms: r.rms_residual,
            residuals: r.per_point_residuals.clone(),
            scene_camera: None,
        }
    }
}

pub(crate) mod vec3_array {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        Ok(Vec3::from(<[f64; 3]>::deserialize(d)?))
    }
}

mod point_map {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, Vec3>, s: S) -> Result<S::Ok, S::Error> {
        m.iter()
            .map(|(k, v)| (k, [v.x, v.y, v.z]))
            .collect::<BTreeMap<_, _>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Vec3>, D::Error> {
        let raw = BTreeMap::<String, [f64; 3]>::deserialize(d)?;
        Ok(raw.into_iter().map(|(k, v)| (k, Vec3::from(v))).collect())
    }
}
