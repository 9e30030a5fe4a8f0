//! Rigid transforms, the minimal 6-vector chart and pinhole projection.
//!
//! The chart used throughout the crate is translation + rotation vector
//! (R³ × so(3)): `v2t(rho, theta) = (Exp(theta), rho)`. It is not the coupled
//! se(3) exponential, so the translation of a chart vector is the
//! translation of the transform.

use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotation angles closer than this to pi are rejected by [`t2v`].
pub const BRANCH_POINT_EPS: f64 = 1e-6;

/// Minimum depth in front of the camera accepted by [`project`], in meters.
pub const MIN_DEPTH: f64 = 1e-6;

/// Tolerance on the quaternion norm when loading from JSON.
const QUATERNION_LOAD_TOL: f64 = 1e-6;

/// Rigid transform in SE(3), stored as a unit quaternion and a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Isometry3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Isometry3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Isometry3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: renormalize(rotation),
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// Builds a transform from a rotation matrix that is assumed orthonormal.
    pub fn from_matrix_parts(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*rotation);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    pub fn compose(&self, other: &Isometry3) -> Isometry3 {
        Isometry3 {
            rotation: renormalize(self.rotation * other.rotation),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Isometry3 {
        let inv = self.rotation.inverse();
        Isometry3 {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Geodesic rotation angle in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        quaternion_angle(&self.rotation)
    }

    /// `self * v2t(delta)`: right-multiplicative update in the chart.
    pub fn retract(&self, delta: &Twist6) -> Isometry3 {
        self.compose(&v2t(delta))
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|x| x.is_finite())
            && self.rotation.coords.iter().all(|x| x.is_finite())
    }

    /// Largest absolute difference over the 7 stored components, treating
    /// `q` and `-q` as the same rotation.
    pub fn max_component_diff(&self, other: &Isometry3) -> f64 {
        let a = self.rotation.coords;
        let mut b = other.rotation.coords;
        if a.dot(&b) < 0.0 {
            b = -b;
        }
        let dq = (a - b).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dq.max(dt)
    }
}

impl Mul for Isometry3 {
    type Output = Isometry3;
    fn mul(self, rhs: Isometry3) -> Isometry3 {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Isometry3> for &'a Isometry3 {
    type Output = Isometry3;
    fn mul(self, rhs: &'a Isometry3) -> Isometry3 {
        self.compose(rhs)
    }
}

pub fn compose(a: &Isometry3, b: &Isometry3) -> Isometry3 {
    a.compose(b)
}

pub fn inverse(a: &Isometry3) -> Isometry3 {
    a.inverse()
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

fn quaternion_angle(q: &UnitQuaternion<f64>) -> f64 {
    let w = q.scalar().abs();
    let v = q.imag().norm();
    2.0 * v.atan2(w)
}

/// Minimal 6-dimensional chart of a rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist6 {
    /// Translational part, meters.
    pub rho: Vector3<f64>,
    /// Rotation vector, radians.
    pub theta: Vector3<f64>,
}

impl Twist6 {
    pub fn new(rho: Vector3<f64>, theta: Vector3<f64>) -> Self {
        Self { rho, theta }
    }

    pub fn zeros() -> Self {
        Self::default()
    }

    /// Stacked as `[rho; theta]`.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho.x,
            self.rho.y,
            self.rho.z,
            self.theta.x,
            self.theta.y,
            self.theta.z,
        )
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            rho: Vector3::new(v[0], v[1], v[2]),
            theta: Vector3::new(v[3], v[4], v[5]),
        }
    }
}

/// Exponential map of SO(3) from a rotation vector.
pub fn so3_exp(theta: &Vector3<f64>) -> UnitQuaternion<f64> {
    let angle = theta.norm();
    let half = 0.5 * angle;
    let (w, k) = if angle < 1e-8 {
        // sin(a/2)/a ~ 1/2 - a^2/48
        (1.0 - angle * angle / 8.0, 0.5 - angle * angle / 48.0)
    } else {
        (half.cos(), half.sin() / angle)
    };
    UnitQuaternion::new_normalize(Quaternion::new(w, k * theta.x, k * theta.y, k * theta.z))
}

/// Logarithm of SO(3) as a rotation vector with angle in `[0, pi]`.
pub fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut w = q.scalar();
    let mut v = q.imag();
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let n = v.norm();
    if n < 1e-8 {
        // angle/sin(angle/2) ~ 2/w (1 - n^2 / (3 w^2))
        return v * (2.0 / w) * (1.0 - n * n / (3.0 * w * w));
    }
    let angle = 2.0 * n.atan2(w);
    v * (angle / n)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the right Jacobian of SO(3) at `theta`.
pub fn so3_right_jacobian_inv(theta: &Vector3<f64>) -> Matrix3<f64> {
    let angle = theta.norm();
    let k = skew(theta);
    let coeff = if angle < 1e-5 {
        1.0 / 12.0 + angle * angle / 720.0
    } else {
        1.0 / (angle * angle) - (1.0 + angle.cos()) / (2.0 * angle * angle.sin())
    };
    Matrix3::identity() + 0.5 * k + coeff * k * k
}

pub fn v2t(x: &Twist6) -> Isometry3 {
    Isometry3 {
        rotation: so3_exp(&x.theta),
        translation: x.rho,
    }
}

/// Chart coordinates of `a`. Fails near a rotation of pi where the rotation
/// vector is not unique.
pub fn t2v(a: &Isometry3) -> Result<Twist6> {
    let angle = a.rotation_angle();
    if (std::f64::consts::PI - angle).abs() < BRANCH_POINT_EPS {
        return Err(Error::BranchPoint { angle });
    }
    Ok(Twist6 {
        rho: a.translation,
        theta: so3_log(&a.rotation),
    })
}

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidIntrinsics("non-finite principal point".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics(format!(
                "image size must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, px: &Pixel) -> bool {
        px.u >= 0.0 && px.v >= 0.0 && px.u <= self.width as f64 && px.v <= self.height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

impl Serialize for Pixel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.u, self.v].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pixel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [u, v] = <[f64; 2]>::deserialize(d)?;
        Ok(Pixel { u, v })
    }
}

/// Projects a camera-frame point. The corner index in the error is left at
/// zero; callers that project point sets patch it.
pub fn project(k: &CameraIntrinsics, p: &Vector3<f64>) -> Result<Pixel> {
    if !(p.z > MIN_DEPTH) {
        return Err(Error::BehindCamera {
            corner: 0,
            depth: p.z,
        });
    }
    Ok(Pixel {
        u: k.fx * p.x / p.z + k.cx,
        v: k.fy * p.y / p.z + k.cy,
    })
}

/// Derivative of [`project`] with respect to the camera-frame point.
pub fn project_jacobian(k: &CameraIntrinsics, p: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    nalgebra::Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * p.x * iz2,
        0.0,
        k.fy * iz,
        -k.fy * p.y * iz2,
    )
}

#[derive(Serialize, Deserialize)]
struct IsometryRepr {
    t: [f64; 3],
    q: [f64; 4],
}

impl Serialize for Isometry3 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let q = self.rotation.quaternion();
        IsometryRepr {
            t: [self.translation.x, self.translation.y, self.translation.z],
            q: [q.w, q.i, q.j, q.k],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Isometry3 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = IsometryRepr::deserialize(d)?;
        Isometry3::from_json_parts(repr.t, repr.q).map_err(serde::de::Error::custom)
    }
}

impl Isometry3 {
    /// Builds a transform from `t = [x, y, z]` and scalar-first `q`,
    /// rejecting quaternions whose norm is off by more than 1e-6.
    pub fn from_json_parts(t: [f64; 3], q: [f64; 4]) -> Result<Self> {
        if t.iter().chain(q.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidIsometry("non-finite component".into()));
        }
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if (norm - 1.0).abs() > QUATERNION_LOAD_TOL {
            return Err(Error::InvalidIsometry(format!(
                "quaternion norm {norm} is not 1 within {QUATERNION_LOAD_TOL}"
            )));
        }
        let translation = Vector3::new(t[0], t[1], t[2]);
        if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            // keep stored bits so save/load round-trips exactly
            return Ok(Isometry3 {
                rotation: UnitQuaternion::new_unchecked(quat),
                translation,
            });
        }
        Ok(Isometry3::new(UnitQuaternion::new_normalize(quat), translation))
    }
}
