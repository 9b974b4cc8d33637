//! Rigid transforms, pinhole intrinsics and the constant-velocity motion model.
//!
//! Poses map world coordinates into the camera frame (`x_c = R x_w + t`).
//! Tangent vectors are ordered `[translation(3), rotation(3)]` and act by
//! left-multiplication: `T ← exp(ξ) · T`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

/// Minimum camera-frame depth accepted by [`project`].
pub const MIN_PROJECT_DEPTH: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Matrix3::identity(), Vector3::new(x, y, z))
    }

    /// Builds a pose from a unit quaternion given as `(w, x, y, z)`.
    pub fn from_quaternion(q: [f64; 4], translation: Vector3<f64>) -> Self {
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        Self::new(*uq.to_rotation_matrix().matrix(), translation)
    }

    /// Rotation as a unit quaternion `(w, x, y, z)` with non-negative `w`.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// Applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    #[inline]
    pub fn transform(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates for a world-to-camera pose.
    pub fn center(&self) -> Point3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// SE(3) exponential of `[ρ, φ]`.
    pub fn exp(xi: &Vector6<f64>) -> Self {
        let rho = Vector3::new(xi[0], xi[1], xi[2]);
        let phi = Vector3::new(xi[3], xi[4], xi[5]);
        let theta = phi.norm();
        let k = skew(&phi);
        let rotation = *Rotation3::new(phi).matrix();
        let v = if theta < 1e-8 {
            Matrix3::identity() + 0.5 * k + k * k / 6.0
        } else {
            let t2 = theta * theta;
            Matrix3::identity()
                + (1.0 - theta.cos()) / t2 * k
                + (theta - theta.sin()) / (t2 * theta) * (k * k)
        };
        Self::new(rotation, v * rho)
    }

    /// Left update `exp(ξ) · self`.
    pub fn retract(&self, xi: &Vector6<f64>) -> Self {
        Pose::exp(xi).compose(self)
    }

    /// Rotation angle in radians.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Re-orthonormalizes the rotation block (SVD projection onto SO(3)).
    pub fn orthonormalized(&self) -> Self {
        let rot = Rotation3::from_matrix(&self.rotation);
        Self::new(*rot.matrix(), self.translation)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let should_be_identity = self.rotation.transpose() * self.rotation;
        (should_be_identity - Matrix3::identity()).amax() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Relative rotation angle and translation distance between two poses.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let rel = self.compose(&other.inverse());
        (rel.rotation_angle(), (self.center() - other.center()).norm())
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Applies `b` then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

/// Relative motion `T_{i-1} · T_{i-2}^{-1}` of the constant-velocity model.
pub fn constant_velocity_delta(prev: &Pose, prev2: &Pose) -> Pose {
    prev.compose(&prev2.inverse())
}

/// Constant-velocity prediction of the next world-to-camera pose, `δT · T_{i-1}`.
///
/// The result is projected back onto SO(3): repeated extrapolation otherwise
/// amplifies rounding error in the rotation block geometrically.
pub fn predict_pose(prev: &Pose, prev2: &Pose) -> Pose {
    constant_velocity_delta(prev, prev2).compose(prev).orthonormalized()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
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
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Intrinsics of the image downscaled by `factor` (pixel centers on integers).
    pub fn scaled(&self, factor: f64, width: usize, height: usize) -> Self {
        Self {
            fx: self.fx / factor,
            fy: self.fy / factor,
            cx: self.cx / factor,
            cy: self.cy / factor,
            width,
            height,
        }
    }

    #[inline]
    pub fn project_camera(&self, p: &Point3) -> [f64; 2] {
        [
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ]
    }

    #[inline]
    pub fn in_bounds(&self, px: [f64; 2], margin: f64) -> bool {
        px[0] >= margin
            && px[1] >= margin
            && px[0] <= self.width as f64 - 1.0 - margin
            && px[1] <= self.height as f64 - 1.0 - margin
    }
}

/// Pinhole projection of a world point; the perspective divide uses the camera-frame depth.
pub fn project(pose: &Pose, intr: &Intrinsics, p_world: &Point3) -> Result<[f64; 2]> {
    let pc = pose.transform(p_world);
    if pc.z <= MIN_PROJECT_DEPTH {
        return Err(Error::BehindCamera { depth: pc.z });
    }
    Ok(intr.project_camera(&pc))
}

/// Back-projects a pixel at camera depth `depth` into world coordinates.
pub fn unproject(pose: &Pose, intr: &Intrinsics, pixel: [f64; 2], depth: f64) -> Result<Point3> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    let pc = Point3::new(
        (pixel[0] - intr.cx) / intr.fx * depth,
        (pixel[1] - intr.cy) / intr.fy * depth,
        depth,
    );
    Ok(pose.inverse().transform(&pc))
}
