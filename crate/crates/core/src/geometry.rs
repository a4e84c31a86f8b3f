//! Rigid transforms, pinhole cameras, rays and boxes.
//!
//! Frame conventions used across the crate:
//!
//! * vehicle / Mobileye frame `M`: x forward, y left, z up, origin on the
//!   ground below the forward camera;
//! * camera frames (scene camera `S`, image-space computations): z forward,
//!   x right, y down.
//!
//! [`RigidTransform::vehicle_to_camera_axes`] is the fixed axis permutation
//! between the two conventions.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Pixel = Vector2<f64>;

/// Tolerance used when checking that a rotation is orthonormal.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Number of chained compositions after which the rotation is
/// re-orthonormalized.
pub const REORTHONORMALIZE_AFTER: u32 = 100;

const UNDISTORT_MAX_ITERS: usize = 10;
const UNDISTORT_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {0})")]
    PointBehindCamera(f64),
    #[error("pixel ({0}, {1}) is outside the image")]
    OutOfImage(f64, f64),
    #[error("zero-length vector")]
    ZeroVector,
    #[error("rotation is not orthonormal with determinant +1")]
    NotOrthonormal,
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("invalid box: half-extents must be strictly positive")]
    InvalidBox,
}

/// A proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
    /// Compositions since the rotation was last orthonormalized.
    chain: u32,
}

impl PartialEq for RigidTransform {
    fn eq(&self, other: &Self) -> bool {
        self.rotation == other.rotation && self.translation == other.translation
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            chain: 0,
        }
    }

    /// Builds a transform, checking that `rotation` is a proper rotation.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        if !is_rotation(&rotation, ORTHONORMAL_TOL) {
            return Err(GeometryError::NotOrthonormal);
        }
        Ok(Self::from_parts_unchecked(rotation, translation))
    }

    pub(crate) fn from_parts_unchecked(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
            chain: 0,
        }
    }

    /// Like [`RigidTransform::new`] but projects a nearly orthonormal matrix
    /// onto SO(3) first. Fails when the input is far from a rotation.
    pub fn new_orthonormalized(
        rotation: Mat3,
        translation: Vec3,
        tol: f64,
    ) -> Result<Self, GeometryError> {
        if !is_rotation(&rotation, tol) {
            return Err(GeometryError::NotOrthonormal);
        }
        Ok(Self::from_parts_unchecked(nearest_rotation(&rotation), translation))
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::from_parts_unchecked(Mat3::identity(), translation)
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Result<Self, GeometryError> {
        let n = axis.norm();
        if n == 0.0 {
            return Err(GeometryError::ZeroVector);
        }
        Ok(Self::from_parts_unchecked(
            axis_angle_matrix(&(axis / n), angle),
            translation,
        ))
    }

    /// Rotation about +z.
    pub fn rot_z(angle: f64) -> Self {
        Self::from_parts_unchecked(axis_angle_matrix(&Vec3::z(), angle), Vec3::zeros())
    }

    /// Maps vehicle-convention coordinates (x fwd, y left, z up) onto camera
    /// coordinates (x right, y down, z fwd) at the same origin.
    pub fn vehicle_to_camera_axes() -> Self {
        Self::from_parts_unchecked(
            Mat3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0),
            Vec3::zeros(),
        )
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
            chain: self.chain,
        }
    }

    /// `self ∘ other`: the result maps `p` to `self(other(p))`.
    pub fn compose(&self, other: &Self) -> Self {
        let mut out = Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            chain: self.chain + other.chain + 1,
        };
        if out.chain > REORTHONORMALIZE_AFTER {
            out.rotation = nearest_rotation(&out.rotation);
            out.chain = 0;
        }
        out
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Applies only the rotation (directions are translation-invariant).
    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Geodesic distance in radians between the two rotations.
    pub fn rotation_angle_to(&self, other: &Self) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    pub fn translation_distance_to(&self, other: &Self) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Frobenius distance of both parts to the identity transform.
    pub fn deviation_from_identity(&self) -> f64 {
        let r = (self.rotation - Mat3::identity()).norm_squared();
        (r + self.translation.norm_squared()).sqrt()
    }
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn transform_point(t: &RigidTransform, p: &Vec3) -> Vec3 {
    t.transform_point(p)
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    /// Row-major.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let r = &t.rotation;
        Self {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = GeometryError;

    fn try_from(repr: TransformRepr) -> Result<Self, Self::Error> {
        let r = repr.rotation;
        let m = Mat3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        // Files written with a few digits are accepted and snapped onto SO(3).
        let t = Vec3::from(repr.translation);
        if is_rotation(&m, ORTHONORMAL_TOL) {
            RigidTransform::new(m, t)
        } else {
            RigidTransform::new_orthonormalized(m, t, 1e-4)
        }
    }
}

fn is_rotation(m: &Mat3, tol: f64) -> bool {
    let gram = m.transpose() * m - Mat3::identity();
    gram.iter().all(|v| v.abs() <= tol) && (m.determinant() - 1.0).abs() <= tol
}

/// Projection onto SO(3) in the Frobenius sense.
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Rodrigues' formula for a unit axis.
pub fn axis_angle_matrix(axis: &Vec3, angle: f64) -> Mat3 {
    let k = axis.cross_matrix();
    Mat3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Rotation angle of `r`, accurate near zero.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let skew = Vec3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5;
    let cos = (r.trace() - 1.0) * 0.5;
    skew.norm().atan2(cos)
}

/// Rotates the unit vector `dir` by `angle` about an axis perpendicular to it;
/// `azimuth` selects the axis within the perpendicular plane.
pub fn perturb_direction(dir: &Vec3, angle: f64, azimuth: f64) -> Vec3 {
    let (e1, e2) = orthonormal_basis(dir);
    let axis = e1 * azimuth.cos() + e2 * azimuth.sin();
    (dir * angle.cos() + axis.cross(dir) * angle.sin()).normalize()
}

/// Two unit vectors completing `n` to an orthonormal basis.
pub fn orthonormal_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1).normalize();
    (e1, e2)
}

/// Pinhole camera with two-coefficient radial distortion. Intrinsics come
/// from configuration; they are never estimated here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            k1: 0.0,
            k2: 0.0,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn with_distortion(mut self, k1: f64, k2: f64) -> Self {
        self.k1 = k1;
        self.k2 = k2;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera("fx and fy must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidCamera("cx must lie in [0, width)".into()));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidCamera("cy must lie in [0, height)".into()));
        }
        if !(self.k1.is_finite() && self.k2.is_finite()) {
            return Err(GeometryError::InvalidCamera("distortion must be finite".into()));
        }
        Ok(())
    }

    fn distortion_factor(&self, x: f64, y: f64) -> f64 {
        let r2 = x * x + y * y;
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }

    pub fn has_distortion(&self) -> bool {
        self.k1 != 0.0 || self.k2 != 0.0
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project(&self, p_cam: &Vec3) -> Result<Pixel, GeometryError> {
        if p_cam.z <= 0.0 {
            return Err(GeometryError::PointBehindCamera(p_cam.z));
        }
        let x = p_cam.x / p_cam.z;
        let y = p_cam.y / p_cam.z;
        let f = self.distortion_factor(x, y);
        Ok(Pixel::new(self.fx * x * f + self.cx, self.fy * y * f + self.cy))
    }

    pub fn contains(&self, uv: &Pixel) -> bool {
        uv.x >= 0.0 && uv.y >= 0.0 && uv.x < self.width as f64 && uv.y < self.height as f64
    }

    /// Undistorted normalized image coordinates of a pixel.
    pub fn normalize_pixel(&self, uv: &Pixel) -> (f64, f64) {
        let xd = (uv.x - self.cx) / self.fx;
        let yd = (uv.y - self.cy) / self.fy;
        if !self.has_distortion() {
            return (xd, yd);
        }
        // Fixed-point iteration x = x_d / f(x).
        let (mut x, mut y) = (xd, yd);
        for _ in 0..UNDISTORT_MAX_ITERS {
            let f = self.distortion_factor(x, y);
            let (nx, ny) = (xd / f, yd / f);
            let step = (nx - x).abs().max((ny - y).abs());
            x = nx;
            y = ny;
            if step < UNDISTORT_TOL {
                break;
            }
        }
        (x, y)
    }

    /// Ray from the camera centre through `uv`, in the camera frame.
    pub fn backproject(&self, uv: &Pixel) -> Result<Ray, GeometryError> {
        if !self.contains(uv) {
            return Err(GeometryError::OutOfImage(uv.x, uv.y));
        }
        let (x, y) = self.normalize_pixel(uv);
        Ray::new(Vec3::zeros(), Vec3::new(x, y, 1.0))
    }
}

/// Half-line with a unit direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    origin: Vec3,
    direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self, GeometryError> {
        let n = direction.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(GeometryError::ZeroVector);
        }
        Ok(Self {
            origin,
            direction: direction / n,
        })
    }

    pub fn origin(&self) -> &Vec3 {
        &self.origin
    }

    pub fn direction(&self) -> &Vec3 {
        &self.direction
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Re-expresses the ray in another frame; the direction is rotated only.
    pub fn transformed(&self, t: &RigidTransform) -> Ray {
        Ray {
            origin: t.transform_point(&self.origin),
            direction: t.transform_vector(&self.direction).normalize(),
        }
    }
}

/// Axis-aligned box given by centre and half-extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb3 {
    center: Vec3,
    half_extents: Vec3,
}

impl Aabb3 {
    pub fn new(center: Vec3, half_extents: Vec3) -> Result<Self, GeometryError> {
        if half_extents.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(GeometryError::InvalidBox);
        }
        Ok(Self { center, half_extents })
    }

    pub fn center(&self) -> &Vec3 {
        &self.center
    }

    pub fn half_extents(&self) -> &Vec3 {
        &self.half_extents
    }

    pub fn min(&self) -> Vec3 {
        self.center - self.half_extents
    }

    pub fn max(&self) -> Vec3 {
        self.center + self.half_extents
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| (p[i] - self.center[i]).abs() <= self.half_extents[i])
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (c, h) = (self.center, self.half_extents);
        let mut out = [Vec3::zeros(); 8];
        for (i, corner) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *corner = c + Vec3::new(sx * h.x, sy * h.y, sz * h.z);
        }
        out
    }

    /// Index pairs into [`Aabb3::corners`] forming the 12 edges.
    pub const EDGES: [(usize, usize); 12] = [
        (0, 1),
        (2, 3),
        (4, 5),
        (6, 7),
        (0, 2),
        (1, 3),
        (4, 6),
        (5, 7),
        (0, 4),
        (1, 5),
        (2, 6),
        (3, 7),
    ];
}

/// Slab test. Returns the entry distance along the ray, `0.0` when the
/// origin is inside the box, `None` on a miss.
pub fn ray_aabb_intersect(ray: &Ray, b: &Aabb3) -> Option<f64> {
    let lo = b.min();
    let hi = b.max();
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for i in 0..3 {
        let o = ray.origin[i];
        let d = ray.direction[i];
        if d == 0.0 {
            if o < lo[i] || o > hi[i] {
                return None;
            }
            continue;
        }
        let t1 = (lo[i] - o) / d;
        let t2 = (hi[i] - o) / d;
        let (a, c) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        t_near = t_near.max(a);
        t_far = t_far.min(c);
        if t_near > t_far {
            return None;
        }
    }
    if t_far < 0.0 {
        return None;
    }
    Some(t_near.max(0.0))
}

/// Egocentric direction of a vehicle-frame point: `(bearing, elevation)` in
/// radians, bearing positive to the left.
pub fn bearing_elevation(p: &Vec3) -> Result<(f64, f64), GeometryError> {
    if p.norm() == 0.0 {
        return Err(GeometryError::ZeroVector);
    }
    let ground = (p.x * p.x + p.y * p.y).sqrt();
    Ok((p.y.atan2(p.x), p.z.atan2(ground)))
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}
