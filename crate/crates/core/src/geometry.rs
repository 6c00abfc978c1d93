//! Pinhole camera model, rigid transforms, and the stereo depth-disparity relation.
//!
//! Coordinate convention: right-handed, +z forward, +x right, +y down.
//! Pixel (0, 0) is the center of the top-left pixel.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Pinhole intrinsics shared by both rectified views of a rig.
#[derive(Debug, Clone, Copy, PartialEq)]
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
        if !(fx.is_finite() && fx > 0.0 && fy.is_finite() && fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidIntrinsics(format!(
                "image dimensions must be nonzero, got {width}x{height}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite() && cx >= 0.0 && cy >= 0.0)
            || cx >= width as f64
            || cy >= height as f64
        {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Normalized ray direction through pixel (u, v), with unit z-component.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Rigid transform c' = R·c + T. Rotation is orthonormal with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Max absolute entry of RᵀR − I, the orthonormality defect.
pub fn rotation_defect(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    gram.iter().fold(0.0f64, |acc, e| acc.max(e.abs()))
}

impl RigidTransform {
    pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-9;

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let defect = rotation_defect(&rotation);
        if !defect.is_finite() || defect > Self::ORTHONORMALITY_TOLERANCE {
            return Err(Error::NotARotation(defect));
        }
        if rotation.determinant() < 0.0 {
            return Err(Error::NotARotation(2.0));
        }
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "translation must be finite, got {translation:?}"
            )));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation about the +y (downward) axis; positive angle turns the camera
    /// toward +x when looking along +z.
    pub fn from_yaw(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RigidTransform {
            rotation: Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Composition: (self ∘ other)(p) = self(other(p)).
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Replaces the rotation by the nearest orthonormal matrix (via SVD).
    /// Returns the defect that was corrected.
    pub fn reorthonormalize(&mut self) -> f64 {
        let defect = rotation_defect(&self.rotation);
        if defect > 0.0 {
            let svd = self.rotation.svd(true, true);
            let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
            let mut r = u * v_t;
            if r.determinant() < 0.0 {
                // Flip the axis of least singular value to stay in SO(3).
                let mut u = u;
                u.column_mut(2).neg_mut();
                r = u * v_t;
            }
            self.rotation = r;
        }
        defect
    }
}

/// Rectified stereo rig: both cameras share intrinsics, offset along +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub intrinsics: CameraIntrinsics,
    pub baseline: f64,
}

impl StereoRig {
    pub fn new(intrinsics: CameraIntrinsics, baseline: f64) -> Result<Self> {
        if !(baseline.is_finite() && baseline > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "baseline must be positive, got {baseline}"
            )));
        }
        Ok(StereoRig {
            intrinsics,
            baseline,
        })
    }

    /// Left-camera-to-right-camera transform. A point at x in the left frame
    /// has coordinate x − B in the right frame, so disparity is positive.
    pub fn left_to_right(&self) -> RigidTransform {
        RigidTransform::from_translation(Vector3::new(-self.baseline, 0.0, 0.0))
    }

    /// World pose of the right camera given the left camera's world pose.
    pub fn right_pose(&self, left_pose: &RigidTransform) -> RigidTransform {
        left_pose.compose(&self.left_to_right().inverse())
    }
}

/// Lifts pixel (u, v) at the given depth to a 3D camera-frame point,
/// c = D·K⁻¹·x.
pub fn lift(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(Error::InvalidDepth(depth));
    }
    Ok(k.ray(u, v) * depth)
}

/// Projects a camera-frame point to continuous pixel coordinates,
/// p = π(K·c) with π([x, y, z]ᵀ) = [x/z, y/z]ᵀ.
pub fn project(k: &CameraIntrinsics, c: &Vector3<f64>) -> Result<Vector2<f64>> {
    if c.z <= 0.0 || !c.z.is_finite() {
        return Err(Error::BehindCamera(c.z));
    }
    Ok(Vector2::new(
        k.fx * c.x / c.z + k.cx,
        k.fy * c.y / c.z + k.cy,
    ))
}

/// Metric depth from horizontal disparity: D = U·B/d.
pub fn depth_from_disparity(disparity: f64, fx: f64, baseline: f64) -> Result<f64> {
    if !(disparity.is_finite() && disparity > 0.0) {
        return Err(Error::InvalidDisparity(disparity));
    }
    Ok(fx * baseline / disparity)
}

/// Horizontal disparity from metric depth: d = U·B/D.
pub fn disparity_from_depth(depth: f64, fx: f64, baseline: f64) -> Result<f64> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(Error::InvalidDepth(depth));
    }
    Ok(fx * baseline / depth)
}

/// Camera_j-from-camera_i transform given world-from-camera poses:
/// pose_j⁻¹ ∘ pose_i.
pub fn relative_pose(pose_i: &RigidTransform, pose_j: &RigidTransform) -> RigidTransform {
    pose_j.inverse().compose(pose_i)
}
