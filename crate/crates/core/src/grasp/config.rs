use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegen::{CameraModel, ViewKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Weight of the local view in the blended error.
    pub alpha: f64,
    pub gain_global: f64,
    pub gain_local: f64,
    /// Per-view error norm, in pixels, below which the gripper closes.
    pub pixel_tolerance: f64,
    /// World distance from the gripper to a grasp point that counts as a
    /// successful grasp.
    pub grasp_tolerance: f64,
    pub max_steps: usize,
    /// Consecutive observations without the target before giving up.
    pub miss_limit: usize,
    pub grasp_reference_local: (f64, f64),
    pub grasp_reference_global: (f64, f64),
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            alpha: 0.5,
            gain_global: 0.5,
            gain_local: 0.5,
            pixel_tolerance: 1.0,
            grasp_tolerance: 3.0,
            max_steps: 30,
            miss_limit: 5,
            grasp_reference_local: (16.0, 16.0),
            grasp_reference_global: (16.0, 16.0),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("controller: {m}")));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        for g in [self.gain_global, self.gain_local] {
            if !(g > 0.0 && g <= 1.0) {
                return bad("gains must lie in (0, 1]");
            }
        }
        if !(self.pixel_tolerance > 0.0) || !(self.grasp_tolerance > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_steps == 0 || self.miss_limit == 0 {
            return bad("max_steps and miss_limit must be positive");
        }
        Ok(())
    }

    /// Sets both grasp references to the rig's camera centers.
    pub fn with_references_from(mut self, rig: &Rig) -> Self {
        self.grasp_reference_local = rig.local.reference_point();
        self.grasp_reference_global = rig.global.reference_point();
        self
    }
}

/// The two robot-mounted cameras and the planar workspace they move over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Rig {
    pub global: CameraModel,
    pub local: CameraModel,
    /// `(w, h)` of the workspace; base and gripper stay inside it.
    pub world_size: (f64, f64),
}

impl Default for Rig {
    fn default() -> Self {
        Rig {
            global: CameraModel::new(ViewKind::Global, 1.0, (32, 32)),
            local: CameraModel::new(ViewKind::Local, 1.0, (32, 32)),
            world_size: (32.0, 32.0),
        }
    }
}

impl Rig {
    pub fn validate(&self) -> Result<()> {
        for cam in [&self.global, &self.local] {
            let (h, w) = cam.crop_size;
            if !(cam.scale.0 > 0.0 && cam.scale.1 > 0.0) || h == 0 || w == 0 {
                return Err(Error::InvalidConfig("camera scale and crop must be positive".into()));
            }
        }
        if !(self.world_size.0 > 0.0 && self.world_size.1 > 0.0) {
            return Err(Error::InvalidConfig("world size must be positive".into()));
        }
        Ok(())
    }
}
