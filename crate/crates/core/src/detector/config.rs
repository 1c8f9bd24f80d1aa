use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// `(h, w)` the network sees; images are resized to this first.
    pub input_size: (usize, usize),
    pub stride: usize,
    pub top_k: usize,
    pub score_threshold: f64,
    pub nms_iou_threshold: f64,
    pub num_classes: usize,
    pub base_width: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Random horizontal flips during training.
    pub augment: bool,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            input_size: (64, 64),
            stride: 4,
            top_k: 16,
            score_threshold: 0.3,
            nms_iou_threshold: 0.5,
            num_classes: 3,
            base_width: 16,
            lr: 2e-3,
            epochs: 10,
            batch_size: 16,
            augment: true,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("detector: {m}")));
        let (h, w) = self.input_size;
        if !self.stride.is_power_of_two() {
            return bad("stride must be a power of two");
        }
        if h == 0 || w == 0 || h % self.stride != 0 || w % self.stride != 0 {
            return bad("input dims must be positive multiples of the stride");
        }
        if self.num_classes == 0 || self.base_width == 0 || self.top_k == 0 {
            return bad("num_classes, base_width and top_k must be positive");
        }
        if !(0.0..=1.0).contains(&self.score_threshold) || !(0.0..=1.0).contains(&self.nms_iou_threshold) {
            return bad("thresholds must lie in [0, 1]");
        }
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return bad("lr and batch_size must be positive");
        }
        Ok(())
    }

    /// `(h, w)` of the head maps.
    pub fn output_size(&self) -> (usize, usize) {
        (self.input_size.0 / self.stride, self.input_size.1 / self.stride)
    }

    /// Number of 2× poolings between input and head.
    pub fn pools(&self) -> usize {
        self.stride.trailing_zeros() as usize
    }
}
