use serde::{Deserialize, Serialize};

use super::config::Rig;
use super::robot::RobotState;
use crate::detector::{Detection, DetectorModel};
use crate::error::Result;
use crate::image::Image;
use crate::scenegen::{render_view, BBox, LayoutScene, ObjectRecord};

/// The two camera feeds for one control step, plus the ground truth
/// visible in each (used only by the oracle detector and for logging).
#[derive(Debug, Clone, PartialEq)]
pub struct DualViewInput {
    pub global_image: Image,
    pub local_image: Image,
    pub global_truth: Vec<ObjectRecord>,
    pub local_truth: Vec<ObjectRecord>,
}

pub fn observe(world: &LayoutScene, robot: &RobotState, rig: &Rig) -> DualViewInput {
    let g = render_view(world, robot, &rig.global);
    let l = render_view(world, robot, &rig.local);
    DualViewInput {
        global_image: g.image,
        local_image: l.image,
        global_truth: g.objects,
        local_truth: l.objects,
    }
}

/// Anything that can produce detections for both views of a step.
pub trait ViewDetector: Sync {
    /// Returns `(local, global)` detections.
    fn detect_views(&self, views: &DualViewInput) -> Result<(Vec<Detection>, Vec<Detection>)>;
}

/// Returns every visible ground-truth box with score 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleDetector;

/// Never reports anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct BlindDetector;

fn truth(objects: &[ObjectRecord]) -> Vec<Detection> {
    objects.iter().map(|o| Detection::new(o.class_id, o.bbox, 1.0)).collect()
}

impl ViewDetector for OracleDetector {
    fn detect_views(&self, views: &DualViewInput) -> Result<(Vec<Detection>, Vec<Detection>)> {
        Ok((truth(&views.local_truth), truth(&views.global_truth)))
    }
}

impl ViewDetector for BlindDetector {
    fn detect_views(&self, _views: &DualViewInput) -> Result<(Vec<Detection>, Vec<Detection>)> {
        Ok((Vec::new(), Vec::new()))
    }
}

impl ViewDetector for DetectorModel {
    fn detect_views(&self, views: &DualViewInput) -> Result<(Vec<Detection>, Vec<Detection>)> {
        let mut out = self.detect_batch(&[&views.local_image, &views.global_image])?;
        let global = out.pop().unwrap_or_default();
        let local = out.pop().unwrap_or_default();
        Ok((local, global))
    }
}

/// The target's box in each view, packed as
/// `[local x_min, y_min, x_max, y_max, global x_min, y_min, x_max, y_max]`.
/// An absent view's half is zero and must not be read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspObservation {
    pub a: [f64; 8],
    pub valid_local: bool,
    pub valid_global: bool,
}

impl GraspObservation {
    pub fn from_boxes(local: Option<BBox>, global: Option<BBox>) -> Self {
        let mut a = [0.0; 8];
        if let Some(b) = local {
            a[..4].copy_from_slice(&b.to_array());
        }
        if let Some(b) = global {
            a[4..].copy_from_slice(&b.to_array());
        }
        GraspObservation {
            a,
            valid_local: local.is_some(),
            valid_global: global.is_some(),
        }
    }

    pub fn local_box(&self) -> Option<BBox> {
        self.valid_local.then(|| BBox::new(self.a[0], self.a[1], self.a[2], self.a[3]))
    }

    pub fn global_box(&self) -> Option<BBox> {
        self.valid_global.then(|| BBox::new(self.a[4], self.a[5], self.a[6], self.a[7]))
    }
}

/// Highest-scoring detection of `class_id`; ties go to the larger box.
pub fn select_target(dets: &[Detection], class_id: u16) -> Option<BBox> {
    dets.iter()
        .filter(|d| d.class_id == class_id)
        .max_by(|a, b| a.score.total_cmp(&b.score).then(a.bbox.area().total_cmp(&b.bbox.area())))
        .map(|d| d.bbox)
}

pub fn predict_observation(
    detector: &dyn ViewDetector,
    views: &DualViewInput,
    target_class: u16,
) -> Result<GraspObservation> {
    let (local, global) = detector.detect_views(views)?;
    Ok(GraspObservation::from_boxes(
        select_target(&local, target_class),
        select_target(&global, target_class),
    ))
}
