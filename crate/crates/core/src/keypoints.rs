//! Keypoint selection and the synthetic keypoint detector.
//!
//! The detector projects the selected model points with the ground-truth
//! pose and corrupts them the way a learned keypoint network would: each
//! keypoint gets an anisotropic 2×2 covariance, a Gaussian perturbation
//! drawn from it, and may be dropped or replaced by an outlier. The
//! covariance reported to the consumer can be made over- or
//! under-confident with respect to the one used for sampling.

use nalgebra::{Matrix2, Rotation2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, Vec2};
use crate::error::{ConfigError, ModelError};
use crate::lie::Vec3;
use crate::model::ObjectModel;
use crate::pose::Pose;

/// Model points used as keypoints, with their indices into the model.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub ids: Vec<usize>,
    pub points: Vec<Vec3>,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Greedy farthest point sampling.
///
/// Starts from the point farthest from the centroid and repeatedly adds
/// the point whose distance to the current selection is largest. Ties go
/// to the lowest index.
pub fn fps_select(model: &ObjectModel, n: usize) -> Result<KeypointSet, ModelError> {
    let pts = model.points();
    if n > pts.len() {
        return Err(ModelError::TooFewPoints { requested: n, available: pts.len() });
    }
    if n == 0 {
        return Ok(KeypointSet { ids: vec![], points: vec![] });
    }
    let centroid = pts.iter().sum::<Vec3>() / pts.len() as f64;
    let first = argmax(pts.iter().map(|p| (p - centroid).norm()));
    let mut ids = vec![first];
    let mut min_dist: Vec<f64> = pts.iter().map(|p| (p - pts[first]).norm()).collect();
    while ids.len() < n {
        let next = argmax(min_dist.iter().copied());
        ids.push(next);
        for (d, p) in min_dist.iter_mut().zip(pts) {
            *d = d.min((p - pts[next]).norm());
        }
    }
    let points = ids.iter().map(|&i| pts[i]).collect();
    Ok(KeypointSet { ids, points })
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// How the reported keypoint covariance relates to the true one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceFidelity {
    #[default]
    Honest,
    /// Reported covariance is the true one divided by the factor.
    Overconfident(f64),
    /// Reported covariance is the true one multiplied by the factor.
    Underconfident(f64),
}

impl CovarianceFidelity {
    fn scale(&self) -> f64 {
        match *self {
            CovarianceFidelity::Honest => 1.0,
            CovarianceFidelity::Overconfident(k) => 1.0 / k,
            CovarianceFidelity::Underconfident(k) => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSide {
    Left,
    Right,
    Top,
    Bottom,
}

/// Structured occlusion: everything projecting into one side of the image
/// is hidden. `fraction` is the hidden share of the image extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfPlaneOccluder {
    pub side: ImageSide,
    #[serde(default = "half")]
    pub fraction: f64,
}

fn half() -> f64 {
    0.5
}

impl HalfPlaneOccluder {
    pub fn hides(&self, uv: &Vec2, k: &Intrinsics) -> bool {
        match self.side {
            ImageSide::Left => uv.x < self.fraction * k.width,
            ImageSide::Right => uv.x > (1.0 - self.fraction) * k.width,
            ImageSide::Top => uv.y < self.fraction * k.height,
            ImageSide::Bottom => uv.y > (1.0 - self.fraction) * k.height,
        }
    }
}

fn default_sigma_floor() -> f64 {
    0.01
}

fn one() -> f64 {
    1.0
}

/// Noise and corruption model of the synthetic detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingProfile {
    /// Standard deviation along the minor axis (px).
    #[serde(default = "one")]
    pub sigma_px: f64,
    /// Ratio of major to minor standard deviation, ≥ 1.
    #[serde(default = "one")]
    pub anisotropy: f64,
    #[serde(default)]
    pub dropout_prob: f64,
    #[serde(default)]
    pub outlier_prob: f64,
    /// Displacement of an outlier from the true projection (px).
    #[serde(default)]
    pub outlier_px: f64,
    #[serde(default)]
    pub covariance_fidelity: CovarianceFidelity,
    /// Lower bound on the reported standard deviation (px), so that a
    /// noise-free profile still yields a usable covariance.
    #[serde(default = "default_sigma_floor")]
    pub reported_sigma_floor_px: f64,
    #[serde(default)]
    pub occluder: Option<HalfPlaneOccluder>,
}

impl Default for SensingProfile {
    fn default() -> Self {
        SensingProfile {
            sigma_px: 1.0,
            anisotropy: 1.0,
            dropout_prob: 0.0,
            outlier_prob: 0.0,
            outlier_px: 0.0,
            covariance_fidelity: CovarianceFidelity::Honest,
            reported_sigma_floor_px: default_sigma_floor(),
            occluder: None,
        }
    }
}

impl SensingProfile {
    pub fn noise_free() -> Self {
        SensingProfile { sigma_px: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        let err = |f: &str, m: &str| Err(ConfigError::invalid(format!("sensing.{f}"), m));
        if !(self.sigma_px >= 0.0 && self.sigma_px.is_finite()) {
            return err("sigma_px", "must be finite and >= 0");
        }
        if !(self.anisotropy >= 1.0) {
            return err("anisotropy", "must be >= 1");
        }
        if !prob(self.dropout_prob) {
            return err("dropout_prob", "must lie in [0, 1]");
        }
        if !prob(self.outlier_prob) {
            return err("outlier_prob", "must lie in [0, 1]");
        }
        if !(self.outlier_px >= 0.0) {
            return err("outlier_px", "must be >= 0");
        }
        if !(self.reported_sigma_floor_px > 0.0) {
            return err("reported_sigma_floor_px", "must be > 0");
        }
        match self.covariance_fidelity {
            CovarianceFidelity::Overconfident(k) | CovarianceFidelity::Underconfident(k)
                if !(k > 0.0 && k.is_finite()) =>
            {
                err("covariance_fidelity", "factor must be finite and > 0")
            }
            _ => Ok(()),
        }
    }
}

/// One detected keypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub pixel: Vec2,
    /// Reported 2×2 covariance (px²).
    pub covariance: Matrix2<f64>,
}

/// Detector output for one frame, indexed like the [`KeypointSet`].
/// `None` marks an invisible keypoint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Measurement {
    pub observations: Vec<Option<Observation>>,
}

impl Measurement {
    pub fn visible_count(&self) -> usize {
        self.observations.iter().filter(|o| o.is_some()).count()
    }

    pub fn all_invisible(n: usize) -> Self {
        Measurement { observations: vec![None; n] }
    }
}

/// Synthesizes one frame of keypoint detections.
///
/// Draws a fixed number of variates per keypoint, so the random stream
/// does not depend on which branches are taken.
pub fn measure<R: Rng + ?Sized>(
    gt_pose: &Pose,
    kps: &KeypointSet,
    k: &Intrinsics,
    profile: &SensingProfile,
    rng: &mut R,
) -> Measurement {
    let observations = kps
        .points
        .iter()
        .map(|x| {
            let orientation: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            let drop_draw: f64 = rng.random();
            let outlier_draw: f64 = rng.random();
            let outlier_dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);

            let uv = k.project(&gt_pose.transform_point(x)).ok()?;
            if !k.in_image(&uv) || drop_draw < profile.dropout_prob {
                return None;
            }
            if profile.occluder.is_some_and(|o| o.hides(&uv, k)) {
                return None;
            }
            let rot = Rotation2::new(orientation);
            let minor = profile.sigma_px;
            let major = profile.anisotropy * profile.sigma_px;
            let noise = if outlier_draw < profile.outlier_prob {
                Vec2::new(outlier_dir.cos(), outlier_dir.sin()) * profile.outlier_px
            } else {
                rot * Vec2::new(minor * z1, major * z2)
            };
            let floor = profile.reported_sigma_floor_px;
            let rep = Matrix2::from_diagonal(&Vec2::new(minor.max(floor).powi(2), (major.max(floor)).powi(2)));
            let covariance = rot.matrix() * rep * rot.matrix().transpose() * profile.covariance_fidelity.scale();
            Some(Observation { pixel: uv + noise, covariance: (covariance + covariance.transpose()) * 0.5 })
        })
        .collect();
    Measurement { observations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::exp_so3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cube() -> ObjectModel {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push(Vec3::new(x, y, z));
                }
            }
        }
        ObjectModel::new(pts).unwrap()
    }

    fn scene() -> (Pose, KeypointSet, Intrinsics) {
        let model = ObjectModel::bracket();
        let kps = fps_select(&model, 8).unwrap();
        let pose = Pose::new(exp_so3(&Vec3::new(0.1, -0.2, 0.05)), Vec3::new(0.01, -0.02, 0.25));
        (pose, kps, Intrinsics::default())
    }

    fn min_pairwise(points: &[Vec3]) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                best = best.min((points[i] - points[j]).norm());
            }
        }
        best
    }

    #[test]
    fn fps_on_cube() {
        let all = fps_select(&cube(), 8).unwrap();
        let mut sorted = all.ids.clone();
        sorted.sort();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
        assert_eq!(all, fps_select(&cube(), 8).unwrap());

        let two = fps_select(&cube(), 2).unwrap();
        assert!(((two.points[0] - two.points[1]).norm() - 3f64.sqrt()).abs() < 1e-15);
        assert!(matches!(fps_select(&cube(), 9), Err(ModelError::TooFewPoints { .. })));
    }

    #[test]
    fn fps_dominates_random_subsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud: Vec<Vec3> = (0..100).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let model = ObjectModel::new(cloud.clone()).unwrap();
        let fps = min_pairwise(&fps_select(&model, 8).unwrap().points);
        for _ in 0..1000 {
            let subset: Vec<Vec3> = rand::seq::index::sample(&mut rng, 100, 8).into_iter().map(|i| cloud[i]).collect();
            assert!(fps >= min_pairwise(&subset));
        }
    }

    #[test]
    fn zero_noise_profile_is_exact() {
        let (pose, kps, k) = scene();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = measure(&pose, &kps, &k, &SensingProfile::noise_free(), &mut rng);
        for (obs, x) in m.observations.iter().zip(&kps.points) {
            let obs = obs.expect("visible");
            assert_eq!(obs.pixel, k.project(&pose.transform_point(x)).unwrap());
        }
    }

    #[test]
    fn full_dropout_hides_everything() {
        let (pose, kps, k) = scene();
        let profile = SensingProfile { dropout_prob: 1.0, ..Default::default() };
        let m = measure(&pose, &kps, &k, &profile, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(m.visible_count(), 0);
    }

    #[test]
    fn behind_camera_and_occluded_points_are_invisible() {
        let (_, kps, k) = scene();
        let behind = Pose::from_translation(Vec3::new(0.0, 0.0, -0.5));
        let m = measure(&behind, &kps, &k, &SensingProfile::default(), &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(m.visible_count(), 0);

        let pose = Pose::from_translation(Vec3::new(0.0, 0.0, 0.3));
        let profile = SensingProfile {
            occluder: Some(HalfPlaneOccluder { side: ImageSide::Left, fraction: 0.5 }),
            ..SensingProfile::noise_free()
        };
        let m = measure(&pose, &kps, &k, &profile, &mut ChaCha8Rng::seed_from_u64(3));
        for (obs, x) in m.observations.iter().zip(&kps.points) {
            let uv = k.project(&pose.transform_point(x)).unwrap();
            assert_eq!(obs.is_some(), uv.x >= 320.0);
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let (pose, kps, k) = scene();
        let profile = SensingProfile {
            sigma_px: 2.0,
            dropout_prob: 0.3,
            outlier_prob: 0.2,
            outlier_px: 20.0,
            ..Default::default()
        };
        let a = measure(&pose, &kps, &k, &profile, &mut ChaCha8Rng::seed_from_u64(9));
        let b = measure(&pose, &kps, &k, &profile, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn covariance_fidelity_scales_reported_covariance() {
        let (pose, kps, k) = scene();
        let base = SensingProfile { sigma_px: 2.0, anisotropy: 2.0, ..Default::default() };
        let under = SensingProfile { covariance_fidelity: CovarianceFidelity::Underconfident(2.0), ..base };
        let over = SensingProfile { covariance_fidelity: CovarianceFidelity::Overconfident(4.0), ..base };
        let a = measure(&pose, &kps, &k, &base, &mut ChaCha8Rng::seed_from_u64(4));
        let b = measure(&pose, &kps, &k, &under, &mut ChaCha8Rng::seed_from_u64(4));
        let c = measure(&pose, &kps, &k, &over, &mut ChaCha8Rng::seed_from_u64(4));
        for ((a, b), c) in a.observations.iter().zip(&b.observations).zip(&c.observations) {
            let (a, b, c) = (a.unwrap(), b.unwrap(), c.unwrap());
            assert_eq!(a.pixel, b.pixel);
            assert!((b.covariance - a.covariance * 2.0).amax() < 1e-12);
            assert!((c.covariance - a.covariance * 0.25).amax() < 1e-12);
        }
    }

    #[test]
    fn empirical_covariance_matches_reported() {
        // 10^5 frames; compare the sample covariance of the pixel errors with
        // the mean reported covariance.
        let (pose, kps, k) = scene();
        let profile = SensingProfile { sigma_px: 2.0, anisotropy: 1.8, ..Default::default() };
        let clean: Vec<Vec2> = kps.points.iter().map(|x| k.project(&pose.transform_point(x)).unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 100_000;
        let mut emp = vec![Matrix2::<f64>::zeros(); kps.len()];
        let mut rep = vec![Matrix2::<f64>::zeros(); kps.len()];
        let mut chi2 = 0.0;
        for _ in 0..n {
            let m = measure(&pose, &kps, &k, &profile, &mut rng);
            for (i, obs) in m.observations.iter().enumerate() {
                let obs = obs.unwrap();
                let e = obs.pixel - clean[i];
                emp[i] += e * e.transpose();
                rep[i] += obs.covariance;
                chi2 += (e.transpose() * obs.covariance.try_inverse().unwrap() * e)[(0, 0)];
            }
        }
        for (e, r) in emp.iter().zip(&rep) {
            let rel = (e - r).norm() / r.norm();
            assert!(rel < 0.05, "relative Frobenius error {rel}");
        }
        let mean_chi2 = chi2 / (n * kps.len()) as f64;
        assert!((mean_chi2 - 2.0).abs() < 0.1, "{mean_chi2}");
    }

    #[test]
    fn profile_validation() {
        assert!(SensingProfile::default().validate().is_ok());
        let bad = SensingProfile { dropout_prob: 1.5, ..Default::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("dropout_prob"));
        let bad = SensingProfile { covariance_fidelity: CovarianceFidelity::Underconfident(0.0), ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
