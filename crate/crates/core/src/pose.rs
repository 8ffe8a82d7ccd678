//! Rigid transforms.

use nalgebra::{Matrix4, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::lie::{exp_so3, log_so3, Rotation, Vec3, Vec6};

/// Rigid transform `x_a = C·x_b + t`.
///
/// Used for the object-in-camera pose `T_co` and for camera-in-world poses
/// inside the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Pose { rotation, translation }
    }

    pub fn identity() -> Self {
        Pose::default()
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose::new(Rotation::identity(), t)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * *p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    /// `self ∘ rhs`
    pub fn compose(&self, rhs: &Pose) -> Pose {
        Pose::new(self.rotation * rhs.rotation, self.rotation * rhs.translation + self.translation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Applies a left-perturbation error `[δt, δφ]`:
    /// `t ← t + δt`, `C ← exp(δφ^)·C`.
    pub fn perturbed(&self, delta: &Vec6) -> Pose {
        let dt = delta.fixed_rows::<3>(0).into_owned();
        let dphi = delta.fixed_rows::<3>(3).into_owned();
        Pose::new(exp_so3(&dphi) * self.rotation, self.translation + dt)
    }

    /// Left-perturbation error taking `self` to `other`, the inverse of
    /// [`Pose::perturbed`].
    pub fn error_to(&self, other: &Pose) -> Vec6 {
        let dt = other.translation - self.translation;
        let dphi = log_so3(&(other.rotation * self.rotation.transpose()));
        Vec6::new(dt.x, dt.y, dt.z, dphi.x, dphi.y, dphi.z)
    }

    /// Unit quaternion `(w, x, y, z)` with `w ≥ 0`, for logging.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(self.rotation.matrix());
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.w, q.i, q.j, q.k]
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite()) && self.rotation.matrix().iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn inverse_and_compose() {
        let p = Pose::new(exp_so3(&Vec3::new(0.3, -0.5, 0.2)), Vec3::new(0.1, 0.2, 0.3));
        let id = p.compose(&p.inverse());
        assert!((id.to_homogeneous() - Matrix4::identity()).amax() < 1e-15);
        let q = Pose::new(exp_so3(&Vec3::new(-0.1, 0.0, 0.9)), Vec3::new(-0.4, 0.0, 1.0));
        let prod = p.compose(&q).to_homogeneous();
        assert!((prod - p.to_homogeneous() * q.to_homogeneous()).amax() < 1e-15);
    }

    #[test]
    fn perturb_then_error_round_trips() {
        let p = Pose::new(exp_so3(&Vec3::new(0.3, -0.5, 0.2)), Vec3::new(0.1, 0.2, 0.3));
        let d = Vec6::new(0.01, -0.02, 0.005, 0.03, 0.0, -0.04);
        assert_relative_eq!(p.error_to(&p.perturbed(&d)), d, epsilon = 1e-14);
    }

    #[test]
    fn quaternion_has_positive_scalar() {
        let p = Pose::new(exp_so3(&Vec3::new(0.0, 0.0, 3.0)), Vec3::zeros());
        let q = p.quaternion_wxyz();
        assert!(q[0] >= 0.0);
        assert_relative_eq!(q.iter().map(|v| v * v).sum::<f64>(), 1.0, epsilon = 1e-14);
    }
}
