//! Pinhole camera model and rigid transforms.
//!
//! Camera frame convention: x right, y down, z forward. Depth values are
//! z-depth (distance along the optical axis), not ray length.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Continuous (sub-pixel) image coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Pinhole intrinsics. Serializes to the intrinsics manifest layout
/// `{"fx","fy","cx","cy","width","height"}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
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
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Intrinsics for an image resized to `width`×`height`, principal point
    /// following pixel-center alignment.
    pub fn scaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }

    /// Projects a camera-frame point to continuous pixel coordinates.
    pub fn project(&self, p: &Point3) -> Result<Pixel> {
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera { z: p.z });
        }
        Ok(self.project_unchecked(p))
    }

    #[inline]
    pub(crate) fn project_unchecked(&self, p: &Point3) -> Pixel {
        Pixel {
            u: self.fx * p.x / p.z + self.cx,
            v: self.fy * p.y / p.z + self.cy,
        }
    }

    /// Lifts a pixel with z-depth `depth` back into the camera frame.
    pub fn backproject(&self, q: Pixel, depth: f64) -> Result<Point3> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::InvalidDepth(depth));
        }
        Ok(self.backproject_unchecked(q, depth))
    }

    #[inline]
    pub(crate) fn backproject_unchecked(&self, q: Pixel, depth: f64) -> Point3 {
        Point3::new(
            (q.u - self.cx) / self.fx * depth,
            (q.v - self.cy) / self.fy * depth,
            depth,
        )
    }
}

/// Rigid SE(3) transform. The rotation is held as a unit quaternion and
/// renormalized on every construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::new_normalize(rotation.into_inner()),
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    /// Builds a pose from quaternion components `(qx, qy, qz, qw)`.
    pub fn from_parts(t: [f64; 3], q: [f64; 4]) -> Result<Self> {
        let quat = nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]);
        let n = quat.norm();
        if !(n > 1e-12) || !n.is_finite() || t.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(format!("invalid pose {t:?} {q:?}")));
        }
        Ok(Self::new(
            UnitQuaternion::new_unchecked(quat / n),
            Vector3::from(t),
        ))
    }

    /// Builds a pose from a rotation matrix, re-orthonormalizing it.
    pub fn from_matrix(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix(r);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), t)
    }

    /// Exponential map of a rotation vector (axis·angle) and translation.
    pub fn from_axis_angle(omega: Vector3<f64>, t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(omega), t)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `[qx, qy, qz, qw]`.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self::new(inv, -(inv * self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Rotation-angle (radians) plus translation norm (meters).
    pub fn error_to(&self, other: &Pose) -> f64 {
        let d = self.inverse().compose(other);
        d.angle() + d.translation.norm()
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

/// Camera motion from robot motion and camera extrinsics:
/// `Tc = Te⁻¹ · Tr · Te`, where `te` is the camera pose in the robot frame.
pub fn compose_camera_transform(tr_ij: &Pose, te: &Pose) -> Pose {
    te.inverse().compose(tr_ij).compose(te)
}

/// Rigid transform of a point, `R·p + t`.
pub fn transform_point(t: &Pose, p: &Point3) -> Point3 {
    t.transform_point(p)
}
