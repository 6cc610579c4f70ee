//! Rectified-stereo coordinate algebra.
//!
//! A rectified rig maps stereo coordinates `(u, v, d)` (pixel position plus
//! positive disparity) to metric camera coordinates through the 4x4 matrix
//! `Q`. Composing `Q`, a relative camera pose, and `Q`'s closed-form inverse
//! yields a single 4x4 transform that carries stereo points from the previous
//! frame's camera into the current one. That transform is what makes warping
//! the previous disparity map a pure matrix multiply per pixel.
//!
//! All poses are world-to-camera. The relative pose between frames is
//! `cur ∘ prev⁻¹`, mapping previous-camera coordinates to current-camera
//! coordinates.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

/// Disparities at or below this value are treated as at-infinity and dropped,
/// keeping downstream splat weights finite.
pub const MIN_DISPARITY: f64 = 1e-6;

/// Rectified stereo rig: identical left/right intrinsics plus baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRig {
    /// Focal length in pixels (shared by x and y).
    pub f: f64,
    /// Principal point x, pixels.
    pub cx: f64,
    /// Principal point y, pixels.
    pub cy: f64,
    /// Stereo baseline in meters.
    pub b: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraRig {
    pub fn new(f: f64, cx: f64, cy: f64, b: f64, width: usize, height: usize) -> Result<Self> {
        if !(f > 0.0) {
            return Err(Error::validation(format!("focal length must be > 0, got {f}")));
        }
        if !(b > 0.0) {
            return Err(Error::validation(format!("baseline must be > 0, got {b}")));
        }
        if !(cx > 0.0 && cx < width as f64) || !(cy > 0.0 && cy < height as f64) {
            return Err(Error::validation(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self { f, cx, cy, b, width, height })
    }

    /// Rig at 1/k resolution. Baseline is metric and does not change.
    pub fn downscaled(&self, k: usize) -> Result<Self> {
        if k == 0 || self.width % k != 0 || self.height % k != 0 {
            return Err(Error::validation(format!(
                "rig {}x{} not divisible by {}",
                self.width, self.height, k
            )));
        }
        let s = 1.0 / k as f64;
        CameraRig::new(self.f * s, self.cx * s, self.cy * s, self.b, self.width / k, self.height / k)
    }

    /// Project a camera-space point (Z > 0) to stereo coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> Option<StereoPoint> {
        if p.z <= 0.0 {
            return None;
        }
        Some(StereoPoint {
            u: self.f * p.x / p.z + self.cx,
            v: self.f * p.y / p.z + self.cy,
            d: self.f * self.b / p.z,
        })
    }

    /// Back-project stereo coordinates (d > 0) to a camera-space point.
    pub fn unproject(&self, p: &StereoPoint) -> Option<Vector3<f64>> {
        if p.d <= 0.0 {
            return None;
        }
        let z = self.f * self.b / p.d;
        Some(Vector3::new((p.u - self.cx) * z / self.f, (p.v - self.cy) * z / self.f, z))
    }
}

/// Rigid world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    /// Validates orthonormality (R·Rᵀ = I within 1e-9) and det(R) = +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation * rotation.transpose();
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > 1e-9 {
            return Err(Error::validation(format!(
                "rotation is not orthonormal (max deviation {dev:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("rotation determinant {det} != +1")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Rotation about `axis` (normalized internally) by `angle` radians, with
    /// the given translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            angle,
        )
        .into_inner();
        Self { rotation, translation }
    }

    /// Unit quaternion (x, y, z, w scalar-last) plus translation.
    pub fn from_quaternion(qx: f64, qy: f64, qz: f64, qw: f64, t: Vector3<f64>) -> Result<Self> {
        let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(Error::validation(format!("quaternion norm {norm} too far from 1")));
        }
        let q = nalgebra::Quaternion::new(qw, qx, qy, qz);
        let uq = nalgebra::UnitQuaternion::from_quaternion(q);
        Ok(Self { rotation: uq.to_rotation_matrix().into_inner(), translation: t })
    }

    /// Scalar-last (x, y, z, w) quaternion for this rotation.
    pub fn quaternion(&self) -> (f64, f64, f64, f64) {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        let c = q.coords; // (x, y, z, w)
        (c.x, c.y, c.z, c.w)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates (for a world-to-camera pose).
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle in radians (0 for identity).
    pub fn rotation_angle(&self) -> f64 {
        let tr = self.rotation.trace();
        ((tr - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }
}

/// Pixel position plus disparity, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoPoint {
    pub u: f64,
    pub v: f64,
    pub d: f64,
}

impl StereoPoint {
    pub fn new(u: f64, v: f64, d: f64) -> Self {
        Self { u, v, d }
    }
}

/// 4x4 transform acting on homogeneous stereo or camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform4(pub Matrix4<f64>);

impl Transform4 {
    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn mul(&self, other: &Transform4) -> Transform4 {
        Transform4(self.0 * other.0)
    }
}

/// The stereo-to-camera matrix: (u, v, d, 1) ↦ homogeneous (x, y, z, w).
///
/// Rows: (1,0,0,-cx), (0,1,0,-cy), (0,0,0,f), (0,0,1/b,0).
pub fn q_matrix(rig: &CameraRig) -> Transform4 {
    Transform4(Matrix4::new(
        1.0, 0.0, 0.0, -rig.cx,
        0.0, 1.0, 0.0, -rig.cy,
        0.0, 0.0, 0.0, rig.f,
        0.0, 0.0, 1.0 / rig.b, 0.0,
    ))
}

/// Closed-form inverse of [`q_matrix`], mapping camera coordinates back to
/// stereo coordinates. Avoids a general 4x4 inversion, which loses digits
/// when the baseline is small.
pub fn q_inverse(rig: &CameraRig) -> Transform4 {
    Transform4(Matrix4::new(
        1.0, 0.0, rig.cx / rig.f, 0.0,
        0.0, 1.0, rig.cy / rig.f, 0.0,
        0.0, 0.0, 0.0, rig.b,
        0.0, 0.0, 1.0 / rig.f, 0.0,
    ))
}

/// Transform mapping previous-camera coordinates to current-camera
/// coordinates: `cur ∘ prev⁻¹` for world-to-camera poses.
pub fn relative_pose(prev: &Pose, cur: &Pose) -> Pose {
    cur.compose(&prev.inverse())
}

/// The dense temporal stereo transform: carries stereo points `(u, v, d)`
/// seen in the previous camera into the current camera frame. Composes the
/// stereo-to-camera map, the relative pose, and the camera-to-stereo map.
pub fn temporal_transform(rig: &CameraRig, rel: &Pose) -> Transform4 {
    Transform4(q_inverse(rig).0 * rel.homogeneous() * q_matrix(rig).0)
}

/// Homogeneous multiply-and-divide. Returns `None` when the point lands
/// behind the camera (w' <= 0) or at-infinity (d' below [`MIN_DISPARITY`]).
pub fn apply_transform(t: &Transform4, p: &StereoPoint) -> Option<StereoPoint> {
    debug_assert!(p.d > 0.0);
    let h = t.0 * Vector4::new(p.u, p.v, p.d, 1.0);
    if h.w <= 0.0 {
        return None;
    }
    let inv_w = 1.0 / h.w;
    let d = h.z * inv_w;
    if d <= MIN_DISPARITY {
        return None;
    }
    Some(StereoPoint { u: h.x * inv_w, v: h.y * inv_w, d })
}

/// Depth from disparity: Z = f·b/d.
pub fn depth_from_disparity(rig: &CameraRig, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::validation(format!("disparity must be > 0, got {d}")));
    }
    Ok(rig.f * rig.b / d)
}

/// Disparity from depth: d = f·b/Z.
pub fn disparity_from_depth(rig: &CameraRig, z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::validation(format!("depth must be > 0, got {z}")));
    }
    Ok(rig.f * rig.b / z)
}
