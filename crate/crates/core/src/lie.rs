//! SO(3) and SE(3) primitives.
//!
//! Rotations are stored as 3×3 matrices. Tangent vectors are plain
//! `Vector3` (rotation) or `Vector6` ordered `[translation, rotation]`.
//! Every exponential/Jacobian switches to a truncated series near the
//! origin so that no branch divides by a vanishing angle.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat6 = Matrix6<f64>;

/// Below this angle `exp_so3` uses `I + φ^ + ½φ^²`.
pub const EXP_SERIES_THRESHOLD: f64 = 1e-6;
/// Below this angle the Jacobians use their Taylor series.
pub const JACOBIAN_SERIES_THRESHOLD: f64 = 1e-5;

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rotation(Mat3);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Wraps a matrix without checking it. Use [`Rotation::from_matrix`]
    /// for untrusted input.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Accepts `m` if it is orthonormal with determinant +1 within `1e-9`.
    pub fn from_matrix(m: Mat3) -> Option<Self> {
        let r = Rotation(m);
        r.is_valid(1e-9).then_some(r)
    }

    /// Projects an arbitrary matrix onto the closest rotation (polar
    /// decomposition through the SVD).
    pub fn orthonormalize(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Mat3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rotation(u * d * v_t)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Largest entry of `|m·mᵀ − I|` and `|det(m) − 1|`.
    pub fn drift(&self) -> f64 {
        let orth = (self.0 * self.0.transpose() - Mat3::identity()).amax();
        orth.max((self.0.determinant() - 1.0).abs())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.0.iter().all(|v| v.is_finite()) && self.drift() <= tol
    }

    /// Re-projects onto SO(3) if the drift exceeds `tol`.
    pub fn renormalized(self, tol: f64) -> Self {
        if self.drift() > tol {
            Self::orthonormalize(&self.0)
        } else {
            self
        }
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn angle(&self) -> f64 {
        log_so3(self).norm()
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Cross-product matrix: `hat(v) * w == v.cross(&w)`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] on the antisymmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(0.5 * (m[(2, 1)] - m[(1, 2)]), 0.5 * (m[(0, 2)] - m[(2, 0)]), 0.5 * (m[(1, 0)] - m[(0, 1)]))
}

/// Rodrigues exponential.
pub fn exp_so3(phi: &Vec3) -> Rotation {
    let theta = phi.norm();
    let k = hat(phi);
    if theta < EXP_SERIES_THRESHOLD {
        return Rotation(Mat3::identity() + k + 0.5 * k * k);
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Rotation(Mat3::identity() + a * k + b * k * k)
}

/// Rotation vector with `‖φ‖ ≤ π`.
///
/// At exactly `θ = π` the sign of the axis is not observable; the axis is
/// then returned with its first nonzero component positive.
pub fn log_so3(c: &Rotation) -> Vec3 {
    let m = c.matrix();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = vee(m);
    let sin_theta = w.norm();
    let theta = sin_theta.atan2(cos_theta);

    if theta < EXP_SERIES_THRESHOLD {
        // θ/sinθ ≈ 1 + θ²/6
        return w * (1.0 + theta * theta / 6.0);
    }
    if cos_theta > -0.99 {
        return w * (theta / sin_theta);
    }

    // Near π: recover the axis from the symmetric part,
    // (C + Cᵀ)/2 = cosθ·I + (1 − cosθ)·u·uᵀ.
    let sym = (m + m.transpose()) * 0.5;
    let outer = (sym - Mat3::identity() * cos_theta) / (1.0 - cos_theta);
    let i = (0..3).max_by(|&a, &b| outer[(a, a)].total_cmp(&outer[(b, b)])).unwrap();
    let mut axis = outer.column(i).into_owned() / outer[(i, i)].max(0.0).sqrt();
    axis.normalize_mut();
    // sinθ carries the axis sign until it drowns in rounding
    let flip = if sin_theta > 1e-10 { axis.dot(&w) < 0.0 } else { first_nonzero_negative(&axis) };
    if flip {
        axis = -axis;
    }
    axis * theta
}

fn first_nonzero_negative(v: &Vec3) -> bool {
    v.iter().find(|x| x.abs() > 1e-12).is_some_and(|x| *x < 0.0)
}

/// Axis-angle vector `θu` of a rotation. Same as [`log_so3`].
pub fn axis_angle(c: &Rotation) -> Vec3 {
    log_so3(c)
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = hat(phi);
    if theta < JACOBIAN_SERIES_THRESHOLD {
        return Mat3::identity() - 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let t2 = theta * theta;
    Mat3::identity() - ((1.0 - theta.cos()) / t2) * k + ((theta - theta.sin()) / (t2 * theta)) * k * k
}

/// Inverse of the right Jacobian, valid for `‖φ‖ < π`.
pub fn right_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = hat(phi);
    if theta < JACOBIAN_SERIES_THRESHOLD {
        return Mat3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let coeff = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Mat3::identity() + 0.5 * k + coeff * k * k
}

/// Left Jacobian of SO(3), `J_l(φ) = J_r(−φ)`. Also the `V` matrix of the
/// SE(3) exponential.
pub fn left_jacobian(phi: &Vec3) -> Mat3 {
    right_jacobian(&(-phi))
}

/// SE(3) exponential of the twist `xi·dt`, with `xi = [v, ω]`.
///
/// Returns the rotation and translation of the resulting transform.
pub fn exp_se3(xi: &Vec6, dt: f64) -> (Rotation, Vec3) {
    let rho = xi.fixed_rows::<3>(0) * dt;
    let phi = xi.fixed_rows::<3>(3) * dt;
    (exp_so3(&phi), left_jacobian(&phi) * rho)
}

/// Symmetrizes a covariance and clamps eigenvalues below zero.
///
/// Returns the clamped matrix together with the smallest eigenvalue seen
/// before clamping.
pub fn clamp_psd(m: &Mat6) -> (Mat6, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return (sym, min);
    }
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let out = eig.eigenvectors * Mat6::from_diagonal(&vals) * eig.eigenvectors.transpose();
    ((out + out.transpose()) * 0.5, min)
}
