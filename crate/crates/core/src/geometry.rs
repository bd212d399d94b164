//! Camera pose algebra, pose-error metrics and viewing frusta.
//!
//! A pose is stored as the camera centre `c` in world coordinates and a unit
//! quaternion `q = (w, x, y, z)` encoding the world-to-camera rotation `R`, so a
//! world point maps to camera coordinates as `X_l = R (X_w - c)`. The camera
//! looks along its local `+z` axis, `x` points right and `y` down.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quaternions whose norm deviates more than this from 1 are renormalized with a warning.
pub const QUATERNION_NORM_WARN: f64 = 1e-6;
/// Quaternions shorter than this cannot be normalized.
pub const QUATERNION_NORM_MIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    center: Vector3<f64>,
    rotation: UnitQuaternion<f64>,
}

impl Pose {
    /// Builds a pose from a camera centre and a `(w, x, y, z)` quaternion.
    ///
    /// The quaternion is renormalized (with a warning) when its norm is off by
    /// more than [`QUATERNION_NORM_WARN`] and rejected below [`QUATERNION_NORM_MIN`].
    pub fn new(center: Vector3<f64>, wxyz: [f64; 4]) -> Result<Self> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if !norm.is_finite() || norm < QUATERNION_NORM_MIN {
            return Err(Error::DegenerateQuaternion { norm });
        }
        if !center.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("camera centre must be finite".into()));
        }
        if (norm - 1.0).abs() > QUATERNION_NORM_WARN {
            log::warn!("quaternion norm {norm} renormalized");
            return Ok(Self::from_parts(center, UnitQuaternion::from_quaternion(q)));
        }
        // Small deviations are kept as-is so that stored quaternions round-trip bit-exactly.
        Ok(Self::from_parts(center, UnitQuaternion::new_unchecked(q)))
    }

    pub fn from_parts(center: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self { center, rotation }
    }

    pub fn identity() -> Self {
        Self::from_parts(Vector3::zeros(), UnitQuaternion::identity())
    }

    /// Pose from a world-to-camera rotation and translation, `X_l = R X_w + t`.
    pub fn from_rt(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        let center = -(rotation.inverse() * translation);
        Self::from_parts(center, rotation)
    }

    pub fn center(&self) -> &Vector3<f64> {
        &self.center
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    /// Quaternion components in `(w, x, y, z)` order.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    /// Translation `t = -R c` of the world-to-camera transform.
    pub fn translation(&self) -> Vector3<f64> {
        -(self.rotation * self.center)
    }

    pub fn world_to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (point - self.center)
    }

    /// Unit viewing direction (camera `+z`) in world coordinates.
    pub fn viewing_direction(&self) -> Vector3<f64> {
        self.rotation.inverse() * Vector3::z()
    }

    pub fn with_negated_quaternion(&self) -> Self {
        let q = -self.rotation.into_inner();
        Self::from_parts(self.center, UnitQuaternion::new_unchecked(q))
    }
}

/// Position and rotation error of an estimated pose against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// Meters.
    pub c_error: f64,
    /// Degrees, in `[0, 180]`.
    pub r_error: f64,
}

impl PoseError {
    pub fn between(estimated: &Pose, reference: &Pose) -> Self {
        Self {
            c_error: position_error(estimated, reference),
            r_error: rotation_error(estimated, reference),
        }
    }

    pub fn within(&self, max_meters: f64, max_degrees: f64) -> bool {
        self.c_error < max_meters && self.r_error < max_degrees
    }
}

/// Euclidean distance between the two camera centres, in meters.
pub fn position_error(estimated: &Pose, reference: &Pose) -> f64 {
    (estimated.center - reference.center).norm()
}

/// Angle of the smallest rotation aligning the two orientations, in degrees.
///
/// Evaluates the angle of `R_est^-1 R_ref` from its trace (the cosine) and its
/// skew-symmetric part (the sine) with `atan2`. This equals the clamped
/// `arccos((trace - 1) / 2)` but keeps full precision near 0 and 180 degrees.
pub fn rotation_error(estimated: &Pose, reference: &Pose) -> f64 {
    let relative = estimated.rotation_matrix().transpose() * reference.rotation_matrix();
    rotation_angle(&relative).to_degrees()
}

/// Rotation angle in radians of a rotation matrix.
pub(crate) fn rotation_angle(m: &Matrix3<f64>) -> f64 {
    let cos = (m.trace() - 1.0) / 2.0;
    let axis = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = axis.norm() / 2.0;
    sin.atan2(cos.clamp(-1.0, 1.0))
}

/// Pinhole camera without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        let intr = Self { fx, fy, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    /// Camera with the principal point at the image centre and the given
    /// horizontal field of view in degrees (square pixels).
    pub fn from_fov(width: f64, height: f64, horizontal_fov_deg: f64) -> Result<Self> {
        let fx = width / 2.0 / (horizontal_fov_deg.to_radians() / 2.0).tan();
        Self::new(fx, fx, width / 2.0, height / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width
            && self.cy > 0.0
            && self.cy < self.height
            && [self.fx, self.fy, self.cx, self.cy, self.width, self.height].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid camera intrinsics {self:?}")))
        }
    }

    pub fn contains_pixel(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.x <= self.width && pixel.y >= 0.0 && pixel.y <= self.height
    }

    /// Normalized image coordinates `(x/z, y/z)` of a pixel.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }

    /// Unit bearing vector in camera coordinates.
    pub fn bearing(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let n = self.unproject(pixel);
        Vector3::new(n.x, n.y, 1.0).normalize()
    }

    pub fn project_local(&self, local: &Vector3<f64>) -> Option<Vector2<f64>> {
        if local.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.fx * local.x / local.z + self.cx,
            self.fy * local.y / local.z + self.cy,
        ))
    }
}

/// Pinhole projection of a world point; `None` when the point is not in front of the camera.
pub fn project(point: &Vector3<f64>, pose: &Pose, intr: &CameraIntrinsics) -> Option<Vector2<f64>> {
    intr.project_local(&pose.world_to_camera(point))
}

/// Closed half-space `{x : normal . x <= offset}` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpace {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(normal: Vector3<f64>, offset: f64) -> Self {
        let norm = normal.norm();
        Self { normal: normal / norm, offset: offset / norm }
    }

    /// Signed distance to the boundary, positive inside.
    pub fn margin(&self, point: &Vector3<f64>) -> f64 {
        self.offset - self.normal.dot(point)
    }

    pub fn translated(&self, origin: &Vector3<f64>) -> Self {
        Self { normal: self.normal, offset: self.offset - self.normal.dot(origin) }
    }
}

/// Viewing frustum as an intersection of half-spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct Frustum {
    half_spaces: Vec<HalfSpace>,
    apex: Vector3<f64>,
}

impl Frustum {
    pub fn from_half_spaces(half_spaces: Vec<HalfSpace>) -> Self {
        Self { half_spaces, apex: Vector3::zeros() }
    }

    /// Camera centre the frustum was built from (origin for bare half-space sets).
    pub fn apex(&self) -> &Vector3<f64> {
        &self.apex
    }

    pub fn half_spaces(&self) -> &[HalfSpace] {
        &self.half_spaces
    }

    pub fn contains(&self, point: &Vector3<f64>, tolerance: f64) -> bool {
        self.half_spaces.iter().all(|h| h.margin(point) >= -tolerance)
    }
}

/// Frustum of all points projecting inside the image with depth in `[near, far]`.
///
/// Four side planes through the camera centre plus a far plane; a near plane
/// is added only when `near > 0`.
pub fn build_frustum(pose: &Pose, intr: &CameraIntrinsics, near: f64, far: f64) -> Result<Frustum> {
    if !(near >= 0.0 && far > near && far.is_finite()) {
        return Err(Error::InvalidInput(format!("frustum needs 0 <= near < far, got near={near} far={far}")));
    }
    let (fx, fy, cx, cy, w, h) = (intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height);
    // Local constraints n . X_l <= d.
    let mut local = vec![
        (Vector3::new(-fx, 0.0, -cx), 0.0),
        (Vector3::new(fx, 0.0, cx - w), 0.0),
        (Vector3::new(0.0, -fy, -cy), 0.0),
        (Vector3::new(0.0, fy, cy - h), 0.0),
        (Vector3::z(), far),
    ];
    if near > 0.0 {
        local.push((-Vector3::z(), -near));
    }
    let inv = pose.rotation().inverse();
    let half_spaces = local
        .into_iter()
        .map(|(n, d)| {
            let n = n.normalize();
            let world_n = inv * n;
            HalfSpace { normal: world_n, offset: d + world_n.dot(pose.center()) }
        })
        .collect();
    Ok(Frustum { half_spaces, apex: *pose.center() })
}
