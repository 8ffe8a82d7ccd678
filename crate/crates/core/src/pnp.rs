//! Per-frame pose from keypoints: covariance-weighted, iteratively
//! reweighted Gauss-Newton on the reprojection error.
//!
//! This is the single-frame estimator of the comparison baseline. It has no
//! motion model; the previous estimate only seeds the iterations.

use nalgebra::{Matrix2, Matrix6};
use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::ekf::keypoint_model;
use crate::keypoints::{KeypointSet, Measurement};
use crate::lie::Vec6;
use crate::pose::Pose;

fn default_min_keypoints() -> usize {
    4
}
fn default_max_iterations() -> usize {
    30
}
fn default_huber() -> f64 {
    2.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PnpConfig {
    #[serde(default = "default_min_keypoints")]
    pub min_keypoints: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Huber threshold on the Mahalanobis residual norm.
    #[serde(default = "default_huber")]
    pub huber_threshold: f64,
}

impl Default for PnpConfig {
    fn default() -> Self {
        PnpConfig {
            min_keypoints: default_min_keypoints(),
            max_iterations: default_max_iterations(),
            huber_threshold: default_huber(),
        }
    }
}

struct Linearization {
    cost: f64,
    normal: Matrix6<f64>,
    gradient: Vec6,
    used: usize,
}

fn linearize(
    pose: &Pose,
    meas: &Measurement,
    kps: &KeypointSet,
    k: &Intrinsics,
    cfg: &PnpConfig,
) -> Option<Linearization> {
    let mut lin = Linearization { cost: 0.0, normal: Matrix6::zeros(), gradient: Vec6::zeros(), used: 0 };
    for (obs, x) in meas.observations.iter().zip(&kps.points) {
        let Some(obs) = obs else { continue };
        let (pred, h) = keypoint_model(pose, x, k).ok()?;
        let info: Matrix2<f64> = obs.covariance.try_inverse()?;
        let e = obs.pixel - pred;
        let d2 = (e.transpose() * info * e)[(0, 0)];
        let d = d2.sqrt();
        let (w, rho) = if d <= cfg.huber_threshold {
            (1.0, d2)
        } else {
            (cfg.huber_threshold / d, 2.0 * cfg.huber_threshold * d - cfg.huber_threshold.powi(2))
        };
        lin.cost += rho;
        let hw = h.transpose() * info * w;
        lin.normal += hw * h;
        lin.gradient += hw * e;
        lin.used += 1;
    }
    Some(lin)
}

/// Estimates `T_co` from one frame, starting from `init`. Returns `None`
/// when fewer than `min_keypoints` keypoints are visible or the iterations
/// leave the valid region.
pub fn estimate_pose(
    init: &Pose,
    meas: &Measurement,
    kps: &KeypointSet,
    k: &Intrinsics,
    cfg: &PnpConfig,
) -> Option<Pose> {
    if meas.visible_count() < cfg.min_keypoints.max(1) {
        return None;
    }
    let mut pose = *init;
    let mut lin = linearize(&pose, meas, kps, k, cfg)?;
    let mut damping = 1e-6;
    for _ in 0..cfg.max_iterations {
        // H = ∂ε/∂δx, so the Gauss-Newton step solves (HᵀWH)·δ = −HᵀWε
        let mut a = lin.normal;
        for i in 0..6 {
            a[(i, i)] *= 1.0 + damping;
        }
        let step = a.cholesky()?.solve(&(-lin.gradient));
        let candidate = pose.perturbed(&step);
        match linearize(&candidate, meas, kps, k, cfg) {
            Some(next) if next.cost <= lin.cost => {
                pose = candidate;
                lin = next;
                damping = (damping * 0.1).max(1e-9);
                if step.norm() < 1e-10 {
                    break;
                }
            }
            _ => {
                damping *= 10.0;
                if damping > 1e6 {
                    break;
                }
            }
        }
    }
    (lin.used >= cfg.min_keypoints && pose.is_finite()).then_some(pose)
}
