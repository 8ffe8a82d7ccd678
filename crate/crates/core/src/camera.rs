//! Pinhole projection without distortion.

use nalgebra::{Matrix2x3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::lie::Vec3;

pub type Vec2 = Vector2<f64>;

fn default_z_min() -> f64 {
    1e-3
}

/// Camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// Points with depth at or below this value (m) cannot be projected.
    #[serde(default = "default_z_min")]
    pub z_min: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Intrinsics { fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0, width: 640.0, height: 480.0, z_min: default_z_min() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("point at depth {depth} m is behind the camera")]
pub struct BehindCamera {
    pub depth: f64,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, field: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::invalid(format!("camera.{field}"), msg))
            }
        };
        check(self.fx > 0.0, "fx", "must be > 0")?;
        check(self.fy > 0.0, "fy", "must be > 0")?;
        check(self.cx > 0.0 && self.cx < self.width, "cx", "must lie in (0, width)")?;
        check(self.cy > 0.0 && self.cy < self.height, "cy", "must lie in (0, height)")?;
        check(self.z_min > 0.0, "z_min", "must be > 0")
    }

    /// `u = fx·x/z + cx`, `v = fy·y/z + cy`.
    pub fn project(&self, p: &Vec3) -> Result<Vec2, BehindCamera> {
        if p.z <= self.z_min {
            return Err(BehindCamera { depth: p.z });
        }
        Ok(Vec2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Derivative of [`Intrinsics::project`] with respect to the camera-frame point.
    pub fn projection_jacobian(&self, p: &Vec3) -> Result<Matrix2x3<f64>, BehindCamera> {
        if p.z <= self.z_min {
            return Err(BehindCamera { depth: p.z });
        }
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        Ok(Matrix2x3::new(self.fx * iz, 0.0, -self.fx * p.x * iz2, 0.0, self.fy * iz, -self.fy * p.y * iz2))
    }

    pub fn in_image(&self, uv: &Vec2) -> bool {
        (0.0..=self.width).contains(&uv.x) && (0.0..=self.height).contains(&uv.y)
    }
}
