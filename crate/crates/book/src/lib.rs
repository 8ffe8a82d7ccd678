//! Guide chapters compiled as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/lie-geometry.md")]
pub mod lie_geometry {}

#[doc = include_str!("../../../book/src/camera-and-keypoints.md")]
pub mod camera_and_keypoints {}

#[doc = include_str!("../../../book/src/pose-ekf.md")]
pub mod pose_ekf {}

#[doc = include_str!("../../../book/src/probabilistic-control.md")]
pub mod probabilistic_control {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/cli-and-file-formats.md")]
pub mod cli_and_file_formats {}
