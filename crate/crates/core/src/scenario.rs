//! Scenario files: one JSON document with a section per component.
//!
//! Every section is optional and falls back to its defaults. Unknown keys
//! are rejected so that typos surface as errors instead of silently
//! running the default experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::control::ControlConfig;
use crate::ekf::FilterConfig;
use crate::error::{ConfigError, Error};
use crate::keypoints::{fps_select, KeypointSet, SensingProfile};
use crate::model::ObjectModel;
use crate::pnp::PnpConfig;

fn default_keypoints() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    /// Point list or OBJ file, relative to the scenario file. `None` uses
    /// the built-in bracket.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_keypoints")]
    pub keypoints: usize,
}

impl Default for ObjectConfig {
    fn default() -> Self {
        ObjectConfig { model: None, keypoints: default_keypoints() }
    }
}

/// How the ground-truth camera integrates the executed twist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kinematics {
    /// `T_wc ← T_wc · exp(ξΔt)`.
    #[default]
    ExpSe3,
    /// The filter's own first-order motion model.
    FirstOrder,
}

/// Frames `[start, end)` during which every keypoint is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameWindow {
    pub start: usize,
    pub end: usize,
}

impl FrameWindow {
    pub fn contains(&self, frame: usize) -> bool {
        (self.start..self.end).contains(&frame)
    }
}

fn default_dt() -> f64 {
    1.0 / 30.0
}
fn default_max_frames() -> usize {
    600
}
fn default_v_eps() -> f64 {
    1e-3
}
fn default_hold() -> usize {
    10
}
fn default_lost_frames() -> usize {
    15
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Control period (s).
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_max_frames")]
    pub max_frames: usize,
    /// Standard deviation of the executed translational velocity error (m/s).
    #[serde(default)]
    pub actuation_sigma_v: f64,
    /// Standard deviation of the executed angular velocity error (rad/s).
    #[serde(default)]
    pub actuation_sigma_w: f64,
    /// Convergence when the 6-vector norm of the PBVS velocity stays below
    /// this value ...
    #[serde(default = "default_v_eps")]
    pub convergence_velocity: f64,
    /// ... for this many consecutive frames.
    #[serde(default = "default_hold")]
    pub convergence_frames: usize,
    #[serde(default)]
    pub dropout_windows: Vec<FrameWindow>,
    #[serde(default)]
    pub kinematics: Kinematics,
    /// Draw the initial filter mean from the initial covariance instead of
    /// starting at the true pose.
    #[serde(default = "yes")]
    pub perturb_initial_estimate: bool,
    /// The per-frame baseline gives up after this many consecutive frames
    /// without a pose.
    #[serde(default = "default_lost_frames")]
    pub lost_track_frames: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            dt: default_dt(),
            max_frames: default_max_frames(),
            actuation_sigma_v: 0.0,
            actuation_sigma_w: 0.0,
            convergence_velocity: default_v_eps(),
            convergence_frames: default_hold(),
            dropout_windows: Vec::new(),
            kinematics: Kinematics::ExpSe3,
            perturb_initial_estimate: true,
            lost_track_frames: default_lost_frames(),
        }
    }
}

fn d15() -> f64 {
    0.15
}
fn d05() -> f64 {
    0.05
}
fn d30() -> f64 {
    0.30
}
fn d10() -> f64 {
    0.10
}
fn d75() -> f64 {
    75.0
}

/// Episode geometry. The object sits at the world origin with its z axis
/// up; cameras look at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSampling {
    /// Height of the nominal desired camera (m).
    #[serde(default = "d15")]
    pub desired_height: f64,
    /// Uniform per-axis variation of the desired camera position (m).
    #[serde(default = "d05")]
    pub desired_jitter: f64,
    /// Height of the nominal initial camera (m).
    #[serde(default = "d30")]
    pub initial_height: f64,
    /// Uniform per-axis offset of the initial camera position (m).
    #[serde(default = "d10")]
    pub initial_offset: f64,
    /// Largest orbit angle of the initial camera about the object (deg).
    #[serde(default = "d75")]
    pub max_rotation_deg: f64,
}

impl Default for PoseSampling {
    fn default() -> Self {
        PoseSampling {
            desired_height: d15(),
            desired_jitter: d05(),
            initial_height: d30(),
            initial_offset: d10(),
            max_rotation_deg: d75(),
        }
    }
}

impl PoseSampling {
    /// No randomness: both cameras straight above the object.
    pub fn canonical() -> Self {
        PoseSampling { desired_jitter: 0.0, initial_offset: 0.0, max_rotation_deg: 0.0, ..Default::default() }
    }
}

fn default_sensing() -> SensingProfile {
    SensingProfile::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub camera: Intrinsics,
    #[serde(default)]
    pub object: ObjectConfig,
    #[serde(default = "default_sensing")]
    pub sensing: SensingProfile,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub baseline: PnpConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub poses: PoseSampling,
    /// Base seed; trial `i` uses `seed + i` unless overridden on the
    /// command line.
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    /// Parses JSON text. `origin` is only used in diagnostics.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.inner();
            let message = inner.to_string();
            let suffix = format!(" at line {} column {}", inner.line(), inner.column());
            let message = message.strip_suffix(&suffix).unwrap_or(&message).to_string();
            ConfigError::Parse {
                path: origin.to_path_buf(),
                line: inner.line(),
                column: inner.column(),
                field: if field == "." { "<root>".into() } else { field },
                message,
            }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Reads and validates a scenario file. A relative model path is
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut scenario = Scenario::from_json(&text, path)?;
        if let Some(model) = &scenario.object.model {
            if model.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                scenario.object.model = Some(base.join(model));
            }
        }
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.camera.validate()?;
        self.sensing.validate()?;
        self.filter.validate()?;
        self.control.validate()?;
        let sim = &self.simulation;
        let err = |f: &str, m: &str| Err(ConfigError::invalid(f, m));
        if self.object.keypoints < 4 {
            return err("object.keypoints", "at least 4 keypoints are needed");
        }
        if !(sim.dt > 0.0 && sim.dt.is_finite()) {
            return err("simulation.dt", "must be > 0");
        }
        if sim.max_frames < 1 {
            return err("simulation.max_frames", "must be >= 1");
        }
        if !(sim.actuation_sigma_v >= 0.0 && sim.actuation_sigma_w >= 0.0) {
            return err("simulation.actuation_sigma_v", "actuation noise must be >= 0");
        }
        if !(sim.convergence_velocity > 0.0) {
            return err("simulation.convergence_velocity", "must be > 0");
        }
        if sim.convergence_frames < 1 {
            return err("simulation.convergence_frames", "must be >= 1");
        }
        if let Some(w) = sim.dropout_windows.iter().find(|w| w.end < w.start) {
            return err("simulation.dropout_windows", &format!("window {}..{} ends before it starts", w.start, w.end));
        }
        if self.baseline.min_keypoints < 4 {
            return err("baseline.min_keypoints", "at least 4 keypoints are needed");
        }
        let p = &self.poses;
        if !(p.desired_height > 0.0 && p.initial_height > 0.0) {
            return err("poses.desired_height", "camera heights must be > 0");
        }
        if !(p.desired_jitter >= 0.0 && p.initial_offset >= 0.0) {
            return err("poses.desired_jitter", "variations must be >= 0");
        }
        if !(0.0..180.0).contains(&p.max_rotation_deg) {
            return err("poses.max_rotation_deg", "must lie in [0, 180)");
        }
        Ok(())
    }

    pub fn object_model(&self) -> Result<ObjectModel, Error> {
        Ok(match &self.object.model {
            Some(path) => ObjectModel::load(path)?,
            None => ObjectModel::bracket(),
        })
    }

    pub fn keypoints(&self, model: &ObjectModel) -> Result<KeypointSet, Error> {
        Ok(fps_select(model, self.object.keypoints)?)
    }
}
