use nalgebra::Matrix2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vservo::control::{apply_policy, entropy, probabilistic_velocity, ControlConfig};
use vservo::ekf::initialize;
use vservo::keypoints::{fps_select, measure, Observation};
use vservo::lie::{exp_so3, log_so3, right_jacobian, right_jacobian_inv, Mat6, Vec3, Vec6};
use vservo::metrics::{add_metric, pearson};
use vservo::{FilterConfig, Intrinsics, Measurement, ObjectModel, Pose, PoseEkf, SensingProfile};

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn rotation_vector() -> impl Strategy<Value = Vec3> {
    // stay clear of the log's branch cut at π
    vec3(1.7).prop_filter("angle below 3", |v| v.norm() < 3.0)
}

fn pose() -> impl Strategy<Value = Pose> {
    (rotation_vector(), vec3(1.0)).prop_map(|(phi, t)| Pose::new(exp_so3(&phi), t))
}

/// Object in front of the camera, roughly facing it.
fn viewing_pose() -> impl Strategy<Value = Pose> {
    (vec3(0.4), vec3(0.03), 0.2..0.5f64).prop_map(|(phi, t, z)| Pose::new(exp_so3(&phi), t + Vec3::new(0.0, 0.0, z)))
}

fn covariance(max_sigma: f64) -> impl Strategy<Value = Mat6> {
    proptest::collection::vec(-max_sigma..max_sigma, 36).prop_map(|v| {
        let a = Mat6::from_column_slice(&v);
        a * a.transpose() + Mat6::identity() * 1e-10
    })
}

proptest! {
    #[test]
    fn so3_log_inverts_exp(phi in rotation_vector()) {
        let back = log_so3(&exp_so3(&phi));
        prop_assert!((back - phi).norm() < 1e-9 * (1.0 + phi.norm()));
    }

    #[test]
    fn right_jacobian_inverse_is_an_inverse(phi in rotation_vector()) {
        let prod = right_jacobian(&phi) * right_jacobian_inv(&phi);
        prop_assert!((prod - nalgebra::Matrix3::identity()).amax() < 1e-8);
    }

    #[test]
    fn pose_compose_inverse_is_identity(p in pose(), q in pose()) {
        let r = p.compose(&q).compose(&q.inverse());
        prop_assert!(p.error_to(&r).norm() < 1e-9);
    }

    #[test]
    fn perturbation_round_trips(p in pose(), d in vec3(0.5), phi in vec3(1.0)) {
        let delta = Vec6::new(d.x, d.y, d.z, phi.x, phi.y, phi.z);
        let q = p.perturbed(&delta);
        prop_assert!((p.error_to(&q) - delta).norm() < 1e-9);
    }

    #[test]
    fn projection_jacobian_matches_differences(x in vec3(0.2), z in 0.1..2.0f64) {
        let k = Intrinsics::default();
        let p = Vec3::new(x.x, x.y, z);
        let j = k.projection_jacobian(&p).unwrap();
        let h = 1e-6;
        for c in 0..3 {
            let mut e = Vec3::zeros();
            e[c] = h;
            let fd = (k.project(&(p + e)).unwrap() - k.project(&(p - e)).unwrap()) / (2.0 * h);
            let col = j.column(c);
            prop_assert!((fd - col).norm() <= 1e-5 * (1.0 + col.norm()));
        }
    }

    #[test]
    fn update_keeps_covariance_psd_and_never_inflates_it(
        truth in viewing_pose(),
        p0 in covariance(0.01),
        seed in any::<u64>(),
        sigma in 0.2..3.0f64,
    ) {
        let model = ObjectModel::bracket();
        let kps = fps_select(&model, 8).unwrap();
        let k = Intrinsics::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = SensingProfile { sigma_px: sigma, ..SensingProfile::default() };
        let meas = measure(&truth, &kps, &k, &profile, &mut rng);
        let ekf = PoseEkf::new(FilterConfig { gate_level: 1.0, ..FilterConfig::default() });
        let state = vservo::FilterState { mean: truth, covariance: p0 };
        if let Ok(out) = ekf.update(&state, &meas, &kps, &k) {
            let p = out.state.covariance;
            prop_assert!((p - p.transpose()).amax() < 1e-15);
            let eig = p.symmetric_eigen().eigenvalues;
            prop_assert!(eig.min() >= -1e-15 * p0.amax());
            prop_assert!(p.trace() <= p0.trace() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn update_with_nothing_visible_is_a_no_op(truth in viewing_pose(), p0 in covariance(0.01)) {
        let kps = fps_select(&ObjectModel::bracket(), 8).unwrap();
        let state = vservo::FilterState { mean: truth, covariance: p0 };
        let out = PoseEkf::default()
            .update(&state, &Measurement::all_invisible(kps.len()), &kps, &Intrinsics::default())
            .unwrap();
        prop_assert_eq!(out.state, state);
        prop_assert_eq!(out.report.visible, 0);
    }

    #[test]
    fn exact_keypoints_pull_the_estimate_toward_truth(
        truth in viewing_pose(),
        d in vec3(0.005),
        phi in vec3(0.01),
    ) {
        let kps = fps_select(&ObjectModel::bracket(), 8).unwrap();
        let k = Intrinsics::default();
        let cov = Matrix2::identity() * 0.25;
        let meas = Measurement {
            observations: kps
                .points
                .iter()
                .map(|x| Some(Observation { pixel: k.project(&truth.transform_point(x)).unwrap(), covariance: cov }))
                .collect(),
        };
        let delta = Vec6::new(d.x, d.y, d.z, phi.x, phi.y, phi.z);
        let start = truth.perturbed(&delta);
        let state = initialize(start, 0.01, 0.02);
        let ekf = PoseEkf::new(FilterConfig { gate_level: 1.0, ..FilterConfig::default() });
        let out = ekf.update(&state, &meas, &kps, &k).unwrap();
        prop_assert!(out.state.mean.error_to(&truth).norm() < start.error_to(&truth).norm());
    }

    #[test]
    fn policy_never_amplifies(
        current in viewing_pose(),
        desired in viewing_pose(),
        p in covariance(0.05),
        threshold in -60.0..-20.0f64,
        scale in 0.0..=1.0f64,
    ) {
        let state = vservo::FilterState { mean: current, covariance: p };
        let twu = probabilistic_velocity(&desired, &state, 0.5);
        let cfg = ControlConfig {
            lambda: 0.5,
            entropy_threshold: Some(threshold),
            reduced_scale: scale,
            ..ControlConfig::default()
        };
        let cmd = apply_policy(&twu, &cfg);
        prop_assert!(cmd.norm() <= twu.mean.norm() + 1e-15);
        // direction is preserved
        let (a, b) = (cmd.to_vec6(), twu.mean.to_vec6());
        prop_assert!(a.dot(&b) >= -1e-15);
    }

    #[test]
    fn entropy_shifts_by_log_of_scale(p in covariance(0.1), s in 0.01..100.0f64) {
        let d = entropy(&(p * s)) - entropy(&p);
        prop_assert!((d - 3.0 * s.ln()).abs() < 1e-8);
    }

    #[test]
    fn add_ignores_a_common_rigid_motion(a in pose(), b in pose(), g in pose()) {
        let model = ObjectModel::bracket();
        let before = add_metric(&a, &b, &model);
        let after = add_metric(&g.compose(&a), &g.compose(&b), &model);
        prop_assert!((before - after).abs() < 1e-12);
        prop_assert!(before >= 0.0);
    }

    #[test]
    fn pearson_is_bounded_and_symmetric(
        pairs in proptest::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 3..60),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Some(r) = pearson(&x, &y) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            let s = pearson(&y, &x).unwrap();
            prop_assert!((r - s).abs() < 1e-12);
        }
    }
}

#[test]
fn pearson_of_a_line_is_one() {
    let x: Vec<f64> = (0..10).map(f64::from).collect();
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
    assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
}
