//! Keypoint-based pose tracking coupled with probabilistic pose-based
//! visual servoing.
//!
//! An error-state EKF on SE(3) tracks the object pose `T_co` from noisy
//! 2D keypoints and uses the camera's own commanded twist as its motion
//! model. The controller computes the PBVS twist from the filter mean,
//! pushes the filter covariance through the control law and slows down
//! when the resulting twist entropy is high. A deterministic simulator
//! closes the loop and scores episodes.
//!
//! ```
//! use vservo::{EpisodeContext, EpisodeOptions, Scenario, run_episode};
//!
//! let mut scenario = Scenario::default();
//! scenario.simulation.actuation_sigma_v = 0.002;
//! let ctx = EpisodeContext::new(scenario).unwrap();
//! let record = run_episode(&ctx, EpisodeOptions::default(), 0, 42).unwrap();
//! assert!(record.metrics.success);
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod control;
pub mod ekf;
pub mod error;
pub mod keypoints;
pub mod lie;
pub mod metrics;
pub mod model;
pub mod pnp;
pub mod pose;
pub mod runner;
pub mod scenario;
pub mod sim;

pub use camera::Intrinsics;
pub use control::{ControlConfig, Twist, TwistWithUncertainty};
pub use ekf::{FilterConfig, FilterState, NoiseParams, PoseEkf};
pub use error::{ConfigError, Error, ModelError, UpdateError};
pub use keypoints::{KeypointSet, Measurement, SensingProfile};
pub use lie::Rotation;
pub use metrics::Summary;
pub use model::ObjectModel;
pub use pose::Pose;
pub use runner::RunConfig;
pub use scenario::Scenario;
pub use sim::{run_batch, run_episode, EpisodeContext, EpisodeOptions, EpisodeRecord, Variant};
