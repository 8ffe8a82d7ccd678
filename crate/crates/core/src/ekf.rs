//! Error-state EKF over the object pose `T_co`.
//!
//! The nominal state is a [`Pose`]; the covariance lives on the 6-dim
//! error `[δt, δφ]` defined by left perturbation, `t = t̂ + δt` and
//! `C = exp(δφ^)·Ĉ`. The same convention is used by the measurement
//! Jacobian, the state injection and the control Jacobian.
//!
//! Propagation uses the commanded camera twist as a constant-velocity
//! motion prior:
//!
//! ```text
//! t⁻ = exp(−ω^Δt)·t − v·Δt
//! C⁻ = exp(−ω^Δt)·C
//! P⁻ = F·P·Fᵀ + R·Δt,   R = diag(σ_v²·I, σ_ω²·I)
//! ```

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x6, Matrix3x6};
use serde::{Deserialize, Serialize};

use crate::camera::{BehindCamera, Intrinsics, Vec2};
use crate::control::Twist;
use crate::error::{ConfigError, UpdateError};
use crate::keypoints::{KeypointSet, Measurement};
use crate::lie::{clamp_psd, exp_so3, hat, log_so3, right_jacobian_inv, Mat3, Mat6, Vec6};
use crate::pose::Pose;

/// Largest acceptable condition number of the innovation covariance.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Camera velocity noise (standard deviations).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    /// Translational velocity noise (m/s).
    pub sigma_vp: f64,
    /// Angular velocity noise (rad/s).
    pub sigma_vw: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams { sigma_vp: 0.002, sigma_vw: 0.004 }
    }
}

impl NoiseParams {
    /// Filter noise that exactly accounts for white actuation noise of the
    /// given per-step standard deviations, given that the filter scales
    /// `R` by `Δt` while the executed displacement error scales with `Δt²`.
    pub fn matching_actuation(sigma_v: f64, sigma_w: f64, dt: f64) -> Self {
        NoiseParams { sigma_vp: sigma_v * dt.sqrt(), sigma_vw: sigma_w * dt.sqrt() }
    }

    pub fn process_covariance(&self) -> Mat6 {
        let vp = self.sigma_vp * self.sigma_vp;
        let vw = self.sigma_vw * self.sigma_vw;
        Mat6::from_diagonal(&Vec6::new(vp, vp, vp, vw, vw, vw))
    }
}

/// Rotation block of the error-state transition matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RotationBlock {
    /// `exp(−ω^Δt)`, the exact transition of a left-perturbation error.
    #[default]
    LeftAdjoint,
    /// `J_r⁻¹(ln(exp(−ω^Δt)·C))`, the right-Jacobian form.
    RightJacobianInverse,
}

fn default_gate_level() -> f64 {
    0.999
}
fn default_reset_after() -> usize {
    5
}
fn default_init_sigma_t() -> f64 {
    0.05
}
fn default_init_sigma_phi() -> f64 {
    10f64.to_radians()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default)]
    pub noise: NoiseParams,
    /// Chi-square(2) confidence of the per-keypoint innovation gate. `1.0`
    /// disables gating.
    #[serde(default = "default_gate_level")]
    pub gate_level: f64,
    #[serde(default)]
    pub joseph_form: bool,
    #[serde(default)]
    pub rotation_block: RotationBlock,
    /// Initial translational standard deviation (m).
    #[serde(default = "default_init_sigma_t")]
    pub init_sigma_t: f64,
    /// Initial rotational standard deviation (rad).
    #[serde(default = "default_init_sigma_phi")]
    pub init_sigma_phi: f64,
    /// After this many consecutive frames in which keypoints were visible
    /// but all gated out, the covariance is reset to its initial value so
    /// that the filter can relock. `0` never resets.
    #[serde(default = "default_reset_after")]
    pub reset_after_rejections: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            noise: NoiseParams::default(),
            gate_level: default_gate_level(),
            joseph_form: false,
            rotation_block: RotationBlock::LeftAdjoint,
            init_sigma_t: default_init_sigma_t(),
            init_sigma_phi: default_init_sigma_phi(),
            reset_after_rejections: default_reset_after(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |f: &str, m: &str| Err(ConfigError::invalid(format!("filter.{f}"), m));
        if !(self.noise.sigma_vp > 0.0) {
            return err("noise.sigma_vp", "must be > 0");
        }
        if !(self.noise.sigma_vw > 0.0) {
            return err("noise.sigma_vw", "must be > 0");
        }
        if !(self.gate_level > 0.0 && self.gate_level <= 1.0) {
            return err("gate_level", "must lie in (0, 1]");
        }
        if !(self.init_sigma_t >= 0.0 && self.init_sigma_phi >= 0.0) {
            return err("init_sigma_t", "initial standard deviations must be >= 0");
        }
        Ok(())
    }
}

/// EKF belief: pose mean and error-state covariance ordered `[δt, δφ]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub mean: Pose,
    pub covariance: Mat6,
}

/// Belief with `P = diag(σ_t²·I, σ_φ²·I)` around `pose`.
pub fn initialize(pose: Pose, init_sigma_t: f64, init_sigma_phi: f64) -> FilterState {
    let (a, b) = (init_sigma_t * init_sigma_t, init_sigma_phi * init_sigma_phi);
    FilterState { mean: pose, covariance: Mat6::from_diagonal(&Vec6::new(a, a, a, b, b, b)) }
}

/// Mean of the constant-velocity motion model.
pub fn propagate_mean(pose: &Pose, twist: &Twist, dt: f64) -> Pose {
    let a = exp_so3(&(-twist.angular * dt));
    Pose::new(a * pose.rotation, a * pose.translation - twist.linear * dt)
}

/// Error-state transition matrix `F`.
pub fn transition_matrix(pose: &Pose, twist: &Twist, dt: f64, block: RotationBlock) -> Mat6 {
    let a = exp_so3(&(-twist.angular * dt));
    let rot = match block {
        RotationBlock::LeftAdjoint => *a.matrix(),
        RotationBlock::RightJacobianInverse => right_jacobian_inv(&log_so3(&(a * pose.rotation))),
    };
    let mut f = Mat6::zeros();
    f.fixed_view_mut::<3, 3>(0, 0).copy_from(a.matrix());
    f.fixed_view_mut::<3, 3>(3, 3).copy_from(&rot);
    f
}

/// Symmetrizes and clamps a covariance, logging if it had drifted
/// noticeably negative.
fn sanitize(p: &Mat6) -> Mat6 {
    let (out, min) = clamp_psd(p);
    if min < -1e-10 {
        log::warn!("covariance lost positive semi-definiteness (min eigenvalue {min:.3e}); clamped");
    }
    out
}

/// Per-keypoint innovation test outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct GateResult {
    pub accepted: Vec<bool>,
    /// Mahalanobis distance `εᵀ S⁻¹ ε` of each keypoint.
    pub distances: Vec<f64>,
}

impl GateResult {
    pub fn all_rejected(&self) -> bool {
        !self.accepted.is_empty() && self.accepted.iter().all(|a| !a)
    }
}

/// Chi-square quantile with two degrees of freedom.
pub fn chi2_2dof_quantile(level: f64) -> f64 {
    if level >= 1.0 {
        f64::INFINITY
    } else {
        -2.0 * (1.0 - level).ln()
    }
}

/// Mahalanobis gate with `S_i = H_i·P·H_iᵀ + Σ_i` per keypoint.
pub fn gate(
    residuals: &[Vec2],
    jacobians: &[Matrix2x6<f64>],
    p: &Mat6,
    covariances: &[Matrix2<f64>],
    level: f64,
) -> GateResult {
    let threshold = chi2_2dof_quantile(level);
    let distances: Vec<f64> = residuals
        .iter()
        .zip(jacobians)
        .zip(covariances)
        .map(|((e, h), sigma)| {
            let s = h * p * h.transpose() + sigma;
            match s.try_inverse() {
                Some(si) => (e.transpose() * si * e)[(0, 0)],
                None => f64::INFINITY,
            }
        })
        .collect();
    let accepted = distances.iter().map(|d| *d <= threshold).collect();
    GateResult { accepted, distances }
}

/// Statistics of one measurement update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateReport {
    pub visible: usize,
    pub accepted: usize,
    /// RMS of the pre-update residuals of the visible keypoints (px).
    pub residual_rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub state: FilterState,
    pub report: UpdateReport,
}

/// The keypoint EKF: propagation, measurement model and update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseEkf {
    pub config: FilterConfig,
}

impl PoseEkf {
    pub fn new(config: FilterConfig) -> Self {
        PoseEkf { config }
    }

    pub fn initialize(&self, pose: Pose) -> FilterState {
        initialize(pose, self.config.init_sigma_t, self.config.init_sigma_phi)
    }

    /// Keeps the mean and restores the initial covariance.
    pub fn reset_covariance(&self, state: &FilterState) -> FilterState {
        FilterState { mean: state.mean, ..self.initialize(state.mean) }
    }

    pub fn propagate(&self, state: &FilterState, twist: &Twist, dt: f64) -> FilterState {
        let f = transition_matrix(&state.mean, twist, dt, self.config.rotation_block);
        let p = f * state.covariance * f.transpose() + self.config.noise.process_covariance() * dt;
        FilterState { mean: propagate_mean(&state.mean, twist, dt), covariance: sanitize(&p) }
    }

    pub fn update(
        &self,
        state: &FilterState,
        meas: &Measurement,
        kps: &KeypointSet,
        k: &Intrinsics,
    ) -> Result<UpdateOutcome, UpdateError> {
        let mut residuals = Vec::new();
        let mut jacobians = Vec::new();
        let mut covs = Vec::new();
        for (obs, x) in meas.observations.iter().zip(&kps.points) {
            let Some(obs) = obs else { continue };
            let Ok((pred, h)) = keypoint_model(&state.mean, x, k) else { continue };
            residuals.push(obs.pixel - pred);
            jacobians.push(h);
            covs.push(obs.covariance);
        }
        let visible = residuals.len();
        let residual_rms = if visible == 0 {
            0.0
        } else {
            (residuals.iter().map(|e| e.norm_squared()).sum::<f64>() / visible as f64).sqrt()
        };
        let mut report = UpdateReport { visible, accepted: 0, residual_rms };
        if visible == 0 {
            return Ok(UpdateOutcome { state: *state, report });
        }

        let gated = gate(&residuals, &jacobians, &state.covariance, &covs, self.config.gate_level);
        if gated.all_rejected() {
            return Err(UpdateError::AllRejected);
        }
        let keep: Vec<usize> = (0..visible).filter(|&i| gated.accepted[i]).collect();
        let m = keep.len();
        report.accepted = m;

        let mut h = DMatrix::<f64>::zeros(2 * m, 6);
        let mut eps = DVector::<f64>::zeros(2 * m);
        let mut q = DMatrix::<f64>::zeros(2 * m, 2 * m);
        for (row, &i) in keep.iter().enumerate() {
            h.view_mut((2 * row, 0), (2, 6)).copy_from(&jacobians[i]);
            eps.rows_mut(2 * row, 2).copy_from(&residuals[i]);
            q.view_mut((2 * row, 2 * row), (2, 2)).copy_from(&covs[i]);
        }

        let p = DMatrix::from_column_slice(6, 6, state.covariance.as_slice());
        let s = &h * &p * h.transpose() + &q;
        let s = (&s + s.transpose()) * 0.5;
        let eig = s.clone().symmetric_eigen().eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_INNOVATION_CONDITION) {
            return Err(UpdateError::SingularInnovation { condition });
        }
        let chol = s.cholesky().ok_or(UpdateError::SingularInnovation { condition })?;
        // K = P Hᵀ S⁻¹  ⇔  Kᵀ = S⁻¹ H P. H differentiates the residual,
        // so the correction is −Kε.
        let gain = chol.solve(&(&h * &p)).transpose();
        let dx = -(&gain * &eps);
        let ikh = DMatrix::<f64>::identity(6, 6) - &gain * &h;
        let p_new = if self.config.joseph_form {
            &ikh * &p * ikh.transpose() + &gain * &q * gain.transpose()
        } else {
            &ikh * &p
        };
        let p_new = Mat6::from_column_slice(p_new.as_slice());
        let delta = Vec6::from_column_slice(dx.as_slice());
        Ok(UpdateOutcome {
            state: FilterState { mean: state.mean.perturbed(&delta), covariance: sanitize(&p_new) },
            report,
        })
    }
}

/// Predicted pixel of one model point and the residual Jacobian
/// `H_i = ∂(u − û)/∂δx`.
pub fn keypoint_model(
    pose: &Pose,
    x: &crate::lie::Vec3,
    k: &Intrinsics,
) -> Result<(Vec2, Matrix2x6<f64>), BehindCamera> {
    let rx = pose.rotation * *x;
    let xc = rx + pose.translation;
    let pred = k.project(&xc)?;
    let jp = k.projection_jacobian(&xc)?;
    let mut dxc = Matrix3x6::<f64>::zeros();
    dxc.fixed_view_mut::<3, 3>(0, 0).copy_from(&Mat3::identity());
    dxc.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-hat(&rx)));
    Ok((pred, -(jp * dxc)))
}

/// Predicted pixel of each keypoint under the state mean.
pub fn predict_keypoints(state: &FilterState, kps: &KeypointSet, k: &Intrinsics) -> Vec<Result<Vec2, BehindCamera>> {
    kps.points.iter().map(|x| k.project(&state.mean.transform_point(x))).collect()
}

/// Stacked `2N×6` measurement Jacobian of all keypoints.
pub fn measurement_jacobian(
    state: &FilterState,
    kps: &KeypointSet,
    k: &Intrinsics,
) -> Result<DMatrix<f64>, BehindCamera> {
    let mut h = DMatrix::zeros(2 * kps.len(), 6);
    for (i, x) in kps.points.iter().enumerate() {
        let (_, hi) = keypoint_model(&state.mean, x, k)?;
        h.view_mut((2 * i, 0), (2, 6)).copy_from(&hi);
    }
    Ok(h)
}

/// Normalized estimation error squared of `estimate` against `truth`.
pub fn nees(truth: &Pose, estimate: &FilterState) -> Option<f64> {
    let e = estimate.mean.error_to(truth);
    let inv = estimate.covariance.try_inverse()?;
    Some((e.transpose() * inv * e)[(0, 0)])
}
