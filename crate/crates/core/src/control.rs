//! Probabilistic pose-based visual servoing.
//!
//! The control error is the transform from the current to the desired
//! camera frame, `T_c*c = T_c*o · T_co⁻¹`. The commanded camera twist is
//!
//! ```text
//! v = −λ·C_c*cᵀ·t_c*c
//! ω = −λ·θu          (θu = axis-angle of C_c*c)
//! ```
//!
//! and its covariance is the EKF covariance pushed through the Jacobian of
//! this law with respect to the filter's error state. The differential
//! entropy of that covariance gates a velocity reduction.

use serde::{Deserialize, Serialize};

use crate::ekf::FilterState;
use crate::error::ConfigError;
use crate::lie::{axis_angle, hat, right_jacobian_inv, Mat3, Mat6, Vec3, Vec6};
use crate::pose::Pose;

/// Camera velocity in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    /// m/s
    pub linear: Vec3,
    /// rad/s
    pub angular: Vec3,
}

impl Twist {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Twist { linear, angular }
    }

    pub fn zero() -> Self {
        Twist::default()
    }

    pub fn to_vec6(&self) -> Vec6 {
        Vec6::new(self.linear.x, self.linear.y, self.linear.z, self.angular.x, self.angular.y, self.angular.z)
    }

    pub fn from_vec6(v: &Vec6) -> Self {
        Twist::new(v.fixed_rows::<3>(0).into_owned(), v.fixed_rows::<3>(3).into_owned())
    }

    /// Euclidean norm of the stacked 6-vector (mixed units).
    pub fn norm(&self) -> f64 {
        self.to_vec6().norm()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Twist::new(self.linear * s, self.angular * s)
    }
}

/// Twist mean with its covariance and differential entropy (nats).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwistWithUncertainty {
    pub mean: Twist,
    pub covariance: Mat6,
    pub entropy: f64,
}

fn default_lambda() -> f64 {
    0.5
}
fn default_reduced_scale() -> f64 {
    0.1
}
fn default_v_max() -> Option<f64> {
    Some(0.25)
}
fn default_w_max() -> Option<f64> {
    Some(0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    /// Control gain (1/s).
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Entropy (nats) above which the command is scaled down. `None`
    /// disables the policy.
    #[serde(default)]
    pub entropy_threshold: Option<f64>,
    /// Factor applied to the command when the entropy is too high. `0`
    /// stops the camera.
    #[serde(default = "default_reduced_scale")]
    pub reduced_scale: f64,
    /// Per-axis translational speed limit (m/s); `None` for no limit.
    #[serde(default = "default_v_max")]
    pub v_max: Option<f64>,
    /// Per-axis angular speed limit (rad/s); `None` for no limit.
    #[serde(default = "default_w_max")]
    pub w_max: Option<f64>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            lambda: default_lambda(),
            entropy_threshold: None,
            reduced_scale: default_reduced_scale(),
            v_max: default_v_max(),
            w_max: default_w_max(),
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |f: &str, m: &str| Err(ConfigError::invalid(format!("control.{f}"), m));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return err("lambda", "must be > 0");
        }
        if !(0.0..=1.0).contains(&self.reduced_scale) {
            return err("reduced_scale", "must lie in [0, 1]");
        }
        if self.v_max.is_some_and(|v| !(v > 0.0)) {
            return err("v_max", "must be > 0 or null");
        }
        if self.w_max.is_some_and(|v| !(v > 0.0)) {
            return err("w_max", "must be > 0 or null");
        }
        Ok(())
    }

    /// Same gains without speed limits or uncertainty policy.
    pub fn unconstrained(&self) -> Self {
        ControlConfig { entropy_threshold: None, v_max: None, w_max: None, ..*self }
    }
}

/// `T_c*c = T_c*o · T_co⁻¹`.
pub fn relative_pose(desired: &Pose, current: &Pose) -> Pose {
    let rel = desired.compose(&current.inverse());
    Pose::new(rel.rotation.renormalized(1e-9), rel.translation)
}

/// The PBVS law without speed limits.
pub fn pbvs_raw(rel: &Pose, lambda: f64) -> Twist {
    let linear = -lambda * (rel.rotation.transpose() * rel.translation);
    let angular = -lambda * axis_angle(&rel.rotation);
    Twist::new(linear, angular)
}

/// Uniformly scales a twist so that no translational component exceeds
/// `v_max` and no angular component exceeds `w_max`.
pub fn clamp_twist(t: &Twist, cfg: &ControlConfig) -> Twist {
    let mut s = 1.0f64;
    if let Some(v) = cfg.v_max {
        let m = t.linear.amax();
        if m > v {
            s = s.min(v / m);
        }
    }
    if let Some(w) = cfg.w_max {
        let m = t.angular.amax();
        if m > w {
            s = s.min(w / m);
        }
    }
    t.scaled(s)
}

/// PBVS velocity with the configured speed limits applied.
pub fn pbvs_velocity(rel: &Pose, cfg: &ControlConfig) -> Twist {
    clamp_twist(&pbvs_raw(rel, cfg.lambda), cfg)
}

/// `∂v/∂δx` of the unclamped law, with `δx` the filter's left-perturbation
/// error on `T_co`:
///
/// ```text
/// J = λ·[ I   (C·C*ᵀ·t*)^ ]
///       [ 0   J_r⁻¹(θu)   ]
/// ```
pub fn velocity_jacobian(desired: &Pose, state: &FilterState, lambda: f64) -> Mat6 {
    let c = state.mean.rotation;
    let a = c * (desired.rotation.transpose() * desired.translation);
    let rel = relative_pose(desired, &state.mean);
    let theta_u = axis_angle(&rel.rotation);
    let mut j = Mat6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Mat3::identity() * lambda));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(hat(&a) * lambda));
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&(right_jacobian_inv(&theta_u) * lambda));
    j
}

/// `Σ_v = J·P·Jᵀ`, symmetrized.
pub fn velocity_covariance(j: &Mat6, p: &Mat6) -> Mat6 {
    let s = j * p * j.transpose();
    (s + s.transpose()) * 0.5
}

/// Differential entropy of a 6-dim Gaussian, `½·ln((2πe)⁶·|Σ|)`, in nats.
///
/// A covariance that is not positive definite is regularized with
/// `1e-12·I`.
pub fn entropy(cov: &Mat6) -> f64 {
    let n = 6.0;
    let log_det = match cov.cholesky() {
        Some(ch) => 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
        None => {
            let reg = cov + Mat6::identity() * 1e-12;
            match reg.cholesky() {
                Some(ch) => 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
                None => f64::NEG_INFINITY,
            }
        }
    };
    0.5 * (n * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + log_det)
}

/// Unclamped twist, its covariance and entropy for the current belief.
pub fn probabilistic_velocity(desired: &Pose, state: &FilterState, lambda: f64) -> TwistWithUncertainty {
    let rel = relative_pose(desired, &state.mean);
    let mean = pbvs_raw(&rel, lambda);
    let j = velocity_jacobian(desired, state, lambda);
    let covariance = velocity_covariance(&j, &state.covariance);
    TwistWithUncertainty { mean, covariance, entropy: entropy(&covariance) }
}

/// Scales the twist down when its entropy exceeds the threshold, then
/// applies the speed limits.
pub fn apply_policy(t: &TwistWithUncertainty, cfg: &ControlConfig) -> Twist {
    let reduced = match cfg.entropy_threshold {
        Some(th) if t.entropy > th => t.mean.scaled(cfg.reduced_scale),
        _ => t.mean,
    };
    clamp_twist(&reduced, cfg)
}
