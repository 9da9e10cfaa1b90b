//! Rotation and pose algebra, the pinhole camera with two-term radial
//! distortion, and similarity transforms.
//!
//! Rotations are stored as canonical axis-angle vectors (angle in `[0, pi]`).
//! Composition goes through unit quaternions and the logarithm uses
//! `atan2`, which keeps small angles and half turns accurate to machine
//! precision.

use nalgebra::{Matrix3, Quaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Camera-frame depth at or below which a point is considered to be behind
/// the camera.
pub const DEPTH_EPSILON: f64 = 1e-9;

/// A 3D rotation as an axis-angle vector (unit axis times angle in radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    axis_angle: Vector3<f64>,
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self {
            axis_angle: Vector3::zeros(),
        }
    }

    /// Builds a rotation from an axis-angle vector, wrapping the angle into
    /// `[0, pi]` (flipping the axis when needed).
    pub fn from_axis_angle(v: Vector3<f64>) -> Self {
        Self {
            axis_angle: canonicalize(v),
        }
    }

    /// Builds a rotation without canonicalizing. Only useful for checking that
    /// downstream math does not depend on the representation.
    pub fn from_axis_angle_raw(v: Vector3<f64>) -> Self {
        Self { axis_angle: v }
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        self.axis_angle
    }

    pub fn angle(&self) -> f64 {
        self.axis_angle.norm()
    }

    pub fn to_quaternion(&self) -> Quaternion<f64> {
        exp_quaternion(&self.axis_angle)
    }

    pub fn from_quaternion(q: &Quaternion<f64>) -> Self {
        Self::from_axis_angle(log_quaternion(q))
    }

    /// Rotation matrix (Rodrigues).
    pub fn matrix(&self) -> Matrix3<f64> {
        exp_matrix(&self.axis_angle)
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self::from_quaternion(&quaternion_from_matrix(m))
    }

    pub fn inverse(&self) -> Self {
        Self::from_axis_angle(-self.axis_angle)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        rotate(self, v)
    }
}

/// Wraps the angle of an axis-angle vector into `[0, pi]`.
pub fn canonicalize(v: Vector3<f64>) -> Vector3<f64> {
    let theta = v.norm();
    if theta <= PI {
        return v;
    }
    let axis = v / theta;
    let mut wrapped = theta % (2.0 * PI);
    let mut sign = 1.0;
    if wrapped > PI {
        wrapped = 2.0 * PI - wrapped;
        sign = -1.0;
    }
    axis * (sign * wrapped)
}

fn exp_quaternion(v: &Vector3<f64>) -> Quaternion<f64> {
    let theta = v.norm();
    let half = 0.5 * theta;
    let (w, k) = if theta < 1e-8 {
        // sin(t/2)/t ~ 1/2 - t^2/48
        (1.0 - theta * theta / 8.0, 0.5 - theta * theta / 48.0)
    } else {
        (half.cos(), half.sin() / theta)
    };
    Quaternion::new(w, k * v.x, k * v.y, k * v.z)
}

fn log_quaternion(q: &Quaternion<f64>) -> Vector3<f64> {
    let q = q.normalize();
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let n = v.norm();
    if n < 1e-12 {
        // 2 atan2(n, w) / n -> 2 / w
        return v * (2.0 / w);
    }
    v * (2.0 * n.atan2(w) / n)
}

fn exp_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = v.norm_squared();
    let k = skew(v);
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

fn quaternion_from_matrix(m: &Matrix3<f64>) -> Quaternion<f64> {
    let trace = m.trace();
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        Quaternion::new(
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        )
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        Quaternion::new(
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        )
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        Quaternion::new(
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        Quaternion::new(
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        )
    }
}

/// Cross-product matrix: `skew(a) * b == a.cross(b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the left Jacobian of SO(3).
///
/// For a left perturbation `exp(d) * exp(phi)`, the axis-angle of the product
/// is `phi + left_jacobian_inverse(phi) * d` to first order.
pub fn left_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let c = if theta2 < 1e-8 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

pub fn rotate(r: &Rotation, v: &Vector3<f64>) -> Vector3<f64> {
    let q = nalgebra::UnitQuaternion::new_unchecked(r.to_quaternion());
    q.transform_vector(v)
}

/// `rotate(compose(a, b), v) == rotate(a, rotate(b, v))`.
pub fn compose(a: &Rotation, b: &Rotation) -> Rotation {
    Rotation::from_quaternion(&(a.to_quaternion() * b.to_quaternion()))
}

/// Exterior orientation of one image: world-to-camera rotation and the camera
/// center in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Rotation,
    pub center: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Rotation, center: Vector3<f64>) -> Self {
        Self { rotation, center }
    }

    /// Camera-frame coordinates `R (x - c)`.
    pub fn to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * (x - self.center)
    }
}

/// Interior orientation shared by every frame of one camera stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: f64,
    pub principal_point: Vector2<f64>,
    /// `(k1, k2)`: distortion factor is `1 + k1 r^2 + k2 r^4`.
    pub radial: Vector2<f64>,
}

impl Intrinsics {
    pub const NUM_PARAMS: usize = 5;

    pub fn new(focal: f64, cx: f64, cy: f64, k1: f64, k2: f64) -> Result<Self> {
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(Error::Domain(format!(
                "focal length must be positive, got {focal}"
            )));
        }
        Ok(Self {
            focal,
            principal_point: Vector2::new(cx, cy),
            radial: Vector2::new(k1, k2),
        })
    }

    /// `[f, cx, cy, k1, k2]`
    pub fn to_array(&self) -> [f64; 5] {
        [
            self.focal,
            self.principal_point.x,
            self.principal_point.y,
            self.radial.x,
            self.radial.y,
        ]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            focal: a[0],
            principal_point: Vector2::new(a[1], a[2]),
            radial: Vector2::new(a[3], a[4]),
        }
    }

    pub fn distortion_factor(&self, r2: f64) -> f64 {
        1.0 + r2 * (self.radial.x + r2 * self.radial.y)
    }

    /// Maps a normalized image point to pixels.
    pub fn distort_and_scale(&self, normalized: &Vector2<f64>) -> Vector2<f64> {
        let d = self.distortion_factor(normalized.norm_squared());
        normalized * (self.focal * d) + self.principal_point
    }

    /// Inverse of [`Intrinsics::distort_and_scale`]: pixel to undistorted
    /// normalized coordinates. Newton iteration on the radius.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        let distorted = (pixel - self.principal_point) / self.focal;
        let rd = distorted.norm();
        if rd == 0.0 {
            return distorted;
        }
        let (k1, k2) = (self.radial.x, self.radial.y);
        let mut r = rd;
        for _ in 0..30 {
            let r2 = r * r;
            let f = r * (1.0 + k1 * r2 + k2 * r2 * r2) - rd;
            let df = 1.0 + 3.0 * k1 * r2 + 5.0 * k2 * r2 * r2;
            if df.abs() < 1e-12 {
                break;
            }
            let step = f / df;
            r -= step;
            if step.abs() <= 1e-16 * r.abs().max(1.0) {
                break;
            }
        }
        distorted * (r / rd)
    }
}

/// Projects a world point into pixel coordinates.
pub fn project(k: &Intrinsics, pose: &CameraPose, x: &Vector3<f64>) -> Result<Vector2<f64>> {
    project_camera_point(k, &pose.to_camera(x))
}

pub fn project_camera_point(k: &Intrinsics, pc: &Vector3<f64>) -> Result<Vector2<f64>> {
    if pc.z <= DEPTH_EPSILON {
        return Err(Error::Cheirality { depth: pc.z });
    }
    Ok(k.distort_and_scale(&Vector2::new(pc.x / pc.z, pc.y / pc.z)))
}

/// `x -> scale * R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: Rotation, translation: Vector3<f64>) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Domain(format!(
                "similarity scale must be positive, got {scale}"
            )));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) * self.scale + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv_rot = self.rotation.inverse();
        let inv_scale = 1.0 / self.scale;
        Self {
            scale: inv_scale,
            rotation: inv_rot,
            translation: -inv_rot.rotate(&self.translation) * inv_scale,
        }
    }

    /// `self.compose(other).apply(p) == self.apply(other.apply(p))`
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: compose(&self.rotation, &other.rotation),
            translation: self.apply(&other.translation),
        }
    }

    /// Maps a camera pose along with the world: the returned pose sees the
    /// transformed world exactly as the original pose saw the original world.
    pub fn apply_to_pose(&self, pose: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: compose(&pose.rotation, &self.rotation.inverse()),
            center: self.apply(&pose.center),
        }
    }
}

pub fn apply_similarity(t: &SimilarityTransform, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    points.iter().map(|p| t.apply(p)).collect()
}

/// Angle of the rotation taking `a` to `b`.
pub fn rotation_distance(a: &Rotation, b: &Rotation) -> f64 {
    compose(b, &a.inverse()).angle()
}
