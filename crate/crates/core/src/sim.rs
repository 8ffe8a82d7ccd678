//! Closed-loop episodes: ground-truth kinematics, synthetic detector,
//! estimator, controller and actuation noise.
//!
//! The object is static at the world origin, so the camera pose in the
//! world is `T_wc = T_co⁻¹`. Each episode owns three random streams derived
//! from its seed (geometry, detector, actuation), so the sampled poses and
//! detector noise do not depend on the variant being run.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::control::{apply_policy, clamp_twist, pbvs_raw, probabilistic_velocity, relative_pose, Twist};
use crate::ekf::{nees, propagate_mean, PoseEkf};
use crate::error::{Error, UpdateError};
use crate::keypoints::{measure, KeypointSet, SensingProfile};
use crate::lie::{exp_se3, exp_so3, Mat6, Rotation, Vec3, Vec6};
use crate::metrics::{self, Summary};
use crate::model::ObjectModel;
use crate::pnp::estimate_pose;
use crate::pose::Pose;
use crate::scenario::{Kinematics, PoseSampling, Scenario};

const MAX_SAMPLING_TRIES: usize = 100;

const STREAM_GEOMETRY: u64 = 0;
const STREAM_DETECTOR: u64 = 1;
const STREAM_ACTUATION: u64 = 2;

/// Source of the pose the controller acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// EKF driven by the commanded twist, with probabilistic PBVS.
    #[default]
    CoupledEkf,
    /// Independent PnP estimate every frame, plain PBVS.
    PbvsPerframe,
    /// No estimator: PBVS on the true pose.
    None,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::CoupledEkf, Variant::PbvsPerframe, Variant::None];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::CoupledEkf => "coupled-ekf",
            Variant::PbvsPerframe => "pbvs-perframe",
            Variant::None => "none",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected coupled-ekf, pbvs-perframe or none)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxFrames,
    /// The per-frame baseline had no pose for too long.
    TargetLost,
    /// The estimate became non-finite.
    NumericalFailure,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxFrames => "max_frames",
            Termination::TargetLost => "target_lost",
            Termination::NumericalFailure => "numerical_failure",
        }
    }
}

/// What the estimator did this frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    /// Measurement incorporated.
    Tracked,
    /// EKF kept its prediction (nothing visible, all gated out, or a
    /// singular innovation).
    Coasting,
    /// The per-frame baseline had no pose; the camera was stopped.
    Lost,
    /// Controller used the true pose.
    GroundTruth,
}

impl FrameStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FrameStatus::Tracked => "tracked",
            FrameStatus::Coasting => "coasting",
            FrameStatus::Lost => "lost",
            FrameStatus::GroundTruth => "ground_truth",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    /// Seconds since the start of the episode.
    pub time: f64,
    /// True `T_co` at the start of the frame.
    pub gt: Pose,
    /// Camera position in the world frame.
    pub camera_position: Vec3,
    pub estimate: Option<Pose>,
    pub covariance: Option<Mat6>,
    pub status: FrameStatus,
    /// PBVS twist from the estimate, before policy and speed limits.
    pub pbvs: Option<Twist>,
    pub velocity_covariance: Option<Mat6>,
    pub entropy: Option<f64>,
    /// Twist sent to the camera.
    pub command: Twist,
    /// PBVS twist from the true pose.
    pub gt_velocity: Twist,
    /// `‖pbvs − gt_velocity‖`.
    pub velocity_error: Option<f64>,
    pub visible: usize,
    pub accepted: usize,
    /// RMS pixel residual of the visible keypoints against the prediction.
    pub residual_rms: Option<f64>,
    pub nees: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success: bool,
    /// ADD between the final and the desired object placement (m).
    pub add: f64,
    pub te_mm: f64,
    pub re_deg: f64,
    pub path_length: f64,
    pub geodesic_length: f64,
    pub length_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub trial: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Initial true `T_co`.
    pub initial: Pose,
    /// Desired `T_c*o`.
    pub desired: Pose,
    pub frames: Vec<FrameRecord>,
    pub termination: Termination,
    /// Set for [`Termination::NumericalFailure`].
    pub diagnostic: Option<String>,
    pub metrics: EpisodeMetrics,
}

impl EpisodeRecord {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn path_length(&self) -> f64 {
        let positions: Vec<Vec3> = self.frames.iter().map(|f| f.camera_position).collect();
        metrics::path_length(&positions)
    }
}

/// Camera pose `T_wc` at `position` with its optical axis through `target`
/// and its image x axis horizontal.
pub fn look_at(position: &Vec3, target: &Vec3) -> Pose {
    let z = (target - position).normalize();
    let mut x = z.cross(&Vec3::y());
    if x.norm() < 1e-9 {
        x = Vec3::x().cross(&z);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let r = Rotation::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[x, y, z]));
    Pose::new(r, *position)
}

/// Uniformly random unit vector.
fn random_axis<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Orbit of the initial camera about the object: uniform angle in
/// `±max_deg`, uniform axis.
pub fn sample_orbit<R: Rng + ?Sized>(max_deg: f64, rng: &mut R) -> (Vec3, f64) {
    let axis = random_axis(rng);
    let angle = if max_deg > 0.0 { rng.random_range(-max_deg..=max_deg).to_radians() } else { 0.0 };
    (axis, angle)
}

fn uniform_offset<R: Rng + ?Sized>(half: f64, rng: &mut R) -> Vec3 {
    if half > 0.0 {
        Vec3::from_fn(|_, _| rng.random_range(-half..=half))
    } else {
        Vec3::zeros()
    }
}

fn all_in_view(co: &Pose, kps: &KeypointSet, k: &Intrinsics) -> bool {
    kps.points.iter().all(|x| k.project(&co.transform_point(x)).is_ok_and(|uv| k.in_image(&uv)))
}

/// Draws the initial true `T_co` and the desired `T_c*o`. Both cameras see
/// every keypoint; draws that do not are repeated.
pub fn sample_poses<R: Rng + ?Sized>(
    sampling: &PoseSampling,
    kps: &KeypointSet,
    k: &Intrinsics,
    rng: &mut R,
) -> Result<(Pose, Pose), Error> {
    for _ in 0..MAX_SAMPLING_TRIES {
        let desired_pos = Vec3::new(0.0, 0.0, sampling.desired_height) + uniform_offset(sampling.desired_jitter, rng);
        let desired = look_at(&desired_pos, &Vec3::zeros()).inverse();

        let nominal = look_at(&Vec3::new(0.0, 0.0, sampling.initial_height), &Vec3::zeros());
        let (axis, angle) = sample_orbit(sampling.max_rotation_deg, rng);
        let orbit = exp_so3(&(axis * angle));
        let offset = uniform_offset(sampling.initial_offset, rng);
        let wc = Pose::new(orbit * nominal.rotation, orbit * nominal.translation + offset);
        let initial = wc.inverse();

        if all_in_view(&initial, kps, k) && all_in_view(&desired, kps, k) {
            return Ok((initial, desired));
        }
    }
    Err(Error::InfeasibleScenario(format!("no pose pair with every keypoint in view after {MAX_SAMPLING_TRIES} draws")))
}

/// Moves the camera by the commanded twist plus Gaussian actuation noise
/// and returns the new true `T_co`.
#[allow(clippy::too_many_arguments)]
pub fn step_dynamics<R: Rng + ?Sized>(
    gt_co: &Pose,
    commanded: &Twist,
    sigma_v: f64,
    sigma_w: f64,
    dt: f64,
    kinematics: Kinematics,
    rng: &mut R,
) -> Pose {
    let mut noise = [0.0f64; 6];
    for n in &mut noise {
        *n = StandardNormal.sample(rng);
    }
    let executed = Twist::new(
        commanded.linear + Vec3::new(noise[0], noise[1], noise[2]) * sigma_v,
        commanded.angular + Vec3::new(noise[3], noise[4], noise[5]) * sigma_w,
    );
    match kinematics {
        Kinematics::ExpSe3 => {
            let (r, t) = exp_se3(&executed.to_vec6(), dt);
            let wc = gt_co.inverse().compose(&Pose::new(r, t));
            wc.inverse()
        }
        Kinematics::FirstOrder => propagate_mean(gt_co, &executed, dt),
    }
}

/// Shared, read-only inputs of every episode of a batch.
#[derive(Debug, Clone)]
pub struct EpisodeContext {
    pub scenario: Scenario,
    pub model: ObjectModel,
    pub keypoints: KeypointSet,
}

impl EpisodeContext {
    /// Loads the object model and selects keypoints.
    pub fn new(scenario: Scenario) -> Result<Self, Error> {
        let model = scenario.object_model()?;
        let keypoints = scenario.keypoints(&model)?;
        Ok(EpisodeContext { scenario, model, keypoints })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeOptions {
    pub variant: Variant,
    /// Scale the command down when the twist entropy is high.
    pub uncertainty_policy: bool,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        EpisodeOptions { variant: Variant::CoupledEkf, uncertainty_policy: true }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Trace {
    frames: Vec<FrameRecord>,
    termination: Termination,
    diagnostic: Option<String>,
}

/// Initial filter mean: the true pose, optionally perturbed by a draw from
/// the initial covariance.
fn initial_estimate<R: Rng + ?Sized>(ctx: &EpisodeContext, gt: &Pose, rng: &mut R) -> Pose {
    let f = &ctx.scenario.filter;
    let mut z = [0.0f64; 6];
    for v in &mut z {
        *v = StandardNormal.sample(rng);
    }
    if !ctx.scenario.simulation.perturb_initial_estimate {
        return *gt;
    }
    let delta = Vec6::new(
        z[0] * f.init_sigma_t,
        z[1] * f.init_sigma_t,
        z[2] * f.init_sigma_t,
        z[3] * f.init_sigma_phi,
        z[4] * f.init_sigma_phi,
        z[5] * f.init_sigma_phi,
    );
    // the filter error is δ with truth = estimate ⊕ δ
    gt.perturbed(&(-delta))
}

fn simulate(
    ctx: &EpisodeContext,
    opts: EpisodeOptions,
    initial: Pose,
    desired: Pose,
    estimate0: Pose,
    seed: u64,
    noisy: bool,
) -> Trace {
    let sc = &ctx.scenario;
    let sim = &sc.simulation;
    let ctl = &sc.control;
    let k = &sc.camera;
    let kps = &ctx.keypoints;
    let ekf = PoseEkf::new(sc.filter);
    let mut det_rng = stream(seed, STREAM_DETECTOR);
    let mut act_rng = stream(seed, STREAM_ACTUATION);
    let (sigma_v, sigma_w) = if noisy { (sim.actuation_sigma_v, sim.actuation_sigma_w) } else { (0.0, 0.0) };
    let profile = if noisy { sc.sensing } else { SensingProfile::noise_free() };
    let blind = SensingProfile { dropout_prob: 1.0, ..profile };

    let mut gt = initial;
    let mut state = ekf.initialize(estimate0);
    let mut last_pose = estimate0;
    let mut command = Twist::zero();
    let mut hold = 0usize;
    let mut lost = 0usize;
    let mut rejected = 0usize;
    let mut frames = Vec::with_capacity(sim.max_frames.min(4096));

    for frame in 0..sim.max_frames {
        if frame > 0 && opts.variant == Variant::CoupledEkf {
            state = ekf.propagate(&state, &command, sim.dt);
        }
        let dark = sim.dropout_windows.iter().any(|w| w.contains(frame));
        let meas = measure(&gt, kps, k, if dark { &blind } else { &profile }, &mut det_rng);
        let gt_velocity = pbvs_raw(&relative_pose(&desired, &gt), ctl.lambda);

        let mut rec = FrameRecord {
            frame,
            time: frame as f64 * sim.dt,
            gt,
            camera_position: gt.inverse().translation,
            estimate: None,
            covariance: None,
            status: FrameStatus::GroundTruth,
            pbvs: None,
            velocity_covariance: None,
            entropy: None,
            command: Twist::zero(),
            gt_velocity,
            velocity_error: None,
            visible: meas.visible_count(),
            accepted: 0,
            residual_rms: None,
            nees: None,
        };

        match opts.variant {
            Variant::CoupledEkf => {
                match ekf.update(&state, &meas, kps, k) {
                    Ok(out) => {
                        rejected = 0;
                        state = out.state;
                        rec.accepted = out.report.accepted;
                        rec.residual_rms = (out.report.visible > 0).then_some(out.report.residual_rms);
                        rec.status = if out.report.visible > 0 { FrameStatus::Tracked } else { FrameStatus::Coasting };
                    }
                    Err(e) => {
                        log::debug!("seed {seed} frame {frame}: {e}; keeping prediction");
                        rec.status = FrameStatus::Coasting;
                        if e == UpdateError::AllRejected {
                            rejected += 1;
                            let limit = sc.filter.reset_after_rejections;
                            if limit > 0 && rejected >= limit {
                                log::debug!("seed {seed} frame {frame}: relocking after {rejected} rejected frames");
                                state = ekf.reset_covariance(&state);
                                rejected = 0;
                            }
                        }
                    }
                }
                if !state.mean.is_finite() || !state.covariance.iter().all(|v| v.is_finite()) {
                    frames.push(rec);
                    return Trace {
                        frames,
                        termination: Termination::NumericalFailure,
                        diagnostic: Some(format!("non-finite filter state at frame {frame}")),
                    };
                }
                let twu = probabilistic_velocity(&desired, &state, ctl.lambda);
                command = if opts.uncertainty_policy { apply_policy(&twu, ctl) } else { clamp_twist(&twu.mean, ctl) };
                rec.estimate = Some(state.mean);
                rec.covariance = Some(state.covariance);
                rec.pbvs = Some(twu.mean);
                rec.velocity_covariance = Some(twu.covariance);
                rec.entropy = Some(twu.entropy);
                rec.nees = nees(&gt, &state);
            }
            Variant::PbvsPerframe => match estimate_pose(&last_pose, &meas, kps, k, &sc.baseline) {
                Some(pose) => {
                    last_pose = pose;
                    lost = 0;
                    let raw = pbvs_raw(&relative_pose(&desired, &pose), ctl.lambda);
                    command = clamp_twist(&raw, ctl);
                    rec.status = FrameStatus::Tracked;
                    rec.estimate = Some(pose);
                    rec.pbvs = Some(raw);
                    rec.accepted = rec.visible;
                    rec.residual_rms = residual_rms(&pose, &meas, kps, k);
                }
                None => {
                    lost += 1;
                    command = Twist::zero();
                    rec.status = FrameStatus::Lost;
                }
            },
            Variant::None => {
                command = clamp_twist(&gt_velocity, ctl);
                rec.estimate = Some(gt);
                rec.pbvs = Some(gt_velocity);
            }
        }
        rec.command = command;
        rec.velocity_error = rec.pbvs.map(|v| (v.to_vec6() - gt_velocity.to_vec6()).norm());

        hold = match rec.pbvs {
            Some(v) if v.norm() < sim.convergence_velocity => hold + 1,
            _ => 0,
        };
        frames.push(rec);
        if hold >= sim.convergence_frames {
            return Trace { frames, termination: Termination::Converged, diagnostic: None };
        }
        if lost > sim.lost_track_frames {
            return Trace { frames, termination: Termination::TargetLost, diagnostic: None };
        }
        gt = step_dynamics(&gt, &command, sigma_v, sigma_w, sim.dt, sim.kinematics, &mut act_rng);
    }
    Trace { frames, termination: Termination::MaxFrames, diagnostic: None }
}

fn residual_rms(pose: &Pose, meas: &crate::keypoints::Measurement, kps: &KeypointSet, k: &Intrinsics) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (obs, x) in meas.observations.iter().zip(&kps.points) {
        let (Some(obs), Ok(pred)) = (obs, k.project(&pose.transform_point(x))) else { continue };
        sum += (obs.pixel - pred).norm_squared();
        n += 1;
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Camera path length of noise-free PBVS on the true pose between the
/// given poses, with the scenario's gain and speed limits.
pub fn geodesic_length(ctx: &EpisodeContext, initial: &Pose, desired: &Pose, seed: u64) -> f64 {
    let opts = EpisodeOptions { variant: Variant::None, uncertainty_policy: false };
    let trace = simulate(ctx, opts, *initial, *desired, *initial, seed, false);
    let positions: Vec<Vec3> = trace.frames.iter().map(|f| f.camera_position).collect();
    metrics::path_length(&positions)
}

/// Runs one episode with the given seed.
pub fn run_episode(
    ctx: &EpisodeContext,
    opts: EpisodeOptions,
    trial: usize,
    seed: u64,
) -> Result<EpisodeRecord, Error> {
    let sc = &ctx.scenario;
    let mut geo_rng = stream(seed, STREAM_GEOMETRY);
    let (initial, desired) = sample_poses(&sc.poses, &ctx.keypoints, &sc.camera, &mut geo_rng)?;
    let estimate0 = initial_estimate(ctx, &initial, &mut geo_rng);
    let trace = simulate(ctx, opts, initial, desired, estimate0, seed, true);
    let geodesic = geodesic_length(ctx, &initial, &desired, seed);

    let mut record = EpisodeRecord {
        trial,
        seed,
        variant: opts.variant,
        initial,
        desired,
        frames: trace.frames,
        termination: trace.termination,
        diagnostic: trace.diagnostic,
        metrics: EpisodeMetrics {
            success: false,
            add: f64::NAN,
            te_mm: f64::NAN,
            re_deg: f64::NAN,
            path_length: 0.0,
            geodesic_length: geodesic,
            length_ratio: f64::NAN,
        },
    };
    let last = record.frames.last().expect("max_frames >= 1").gt;
    let (te, re) = metrics::te_re(&last, &desired);
    record.metrics.add = metrics::add_metric(&last, &desired, &ctx.model);
    record.metrics.te_mm = te;
    record.metrics.re_deg = re;
    record.metrics.path_length = record.path_length();
    record.metrics.length_ratio = metrics::length_ratio(&record, geodesic);
    record.metrics.success = metrics::success(&record, &ctx.model);
    Ok(record)
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub records: Vec<EpisodeRecord>,
    pub summary: Summary,
}

/// Runs `trials` episodes with seeds `base_seed + i` on up to `parallelism`
/// threads. Records come back in trial order whatever the thread count.
pub fn run_batch(
    ctx: &EpisodeContext,
    opts: EpisodeOptions,
    trials: usize,
    base_seed: u64,
    parallelism: usize,
) -> Result<BatchResult, Error> {
    let job = || {
        (0..trials)
            .into_par_iter()
            .map(|i| run_episode(ctx, opts, i, base_seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>, _>>()
    };
    let records = if parallelism <= 1 {
        (0..trials)
            .map(|i| run_episode(ctx, opts, i, base_seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::InfeasibleScenario(format!("cannot start worker pool: {e}")))?
            .install(job)?
    };
    let summary = Summary::from_records(opts.variant, &records);
    Ok(BatchResult { records, summary })
}
