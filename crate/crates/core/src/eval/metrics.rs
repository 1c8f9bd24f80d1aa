use serde::{Deserialize, Serialize};

use super::matching::{match_detections, GtBox, MatchResult};
use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::grasp::TrialResult;

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Predictions and ground truth of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval<'a> {
    pub preds: &'a [Detection],
    pub gts: &'a [GtBox],
}

/// 101-point interpolated AP from score-ranked true/false-positive flags.
pub fn interpolated_ap(ranked_tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(ranked_tp.len());
    let mut precision = Vec::with_capacity(ranked_tp.len());
    for (i, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let pos = recall.partition_point(|&x| x < r - 1e-12);
        if pos < precision.len() {
            sum += precision[pos];
        }
    }
    sum / 101.0
}

/// AP of one class over a dataset; `None` when the class has no ground
/// truth.
pub fn average_precision(images: &[ImageEval], class_id: u16, iou_threshold: f64) -> Option<f64> {
    let mut scored: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut num_gt = 0;
    for (im_idx, im) in images.iter().enumerate() {
        let preds: Vec<Detection> = im.preds.iter().filter(|d| d.class_id == class_id).cloned().collect();
        let gts: Vec<GtBox> = im.gts.iter().filter(|g| g.class_id == class_id).copied().collect();
        num_gt += gts.len();
        let m = match_detections(&preds, &gts, iou_threshold);
        let rank = super::matching::ranked_indices(&preds);
        let tp: std::collections::HashSet<usize> = m.true_positives.iter().map(|p| p.pred).collect();
        for (r, &p) in rank.iter().enumerate() {
            scored.push((preds[p].score, im_idx, r, tp.contains(&p)));
        }
    }
    if num_gt == 0 {
        return None;
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let flags: Vec<bool> = scored.iter().map(|s| s.3).collect();
    Some(interpolated_ap(&flags, num_gt))
}

fn gt_classes(images: &[ImageEval]) -> Vec<u16> {
    let mut c: Vec<u16> = images.iter().flat_map(|im| im.gts.iter().map(|g| g.class_id)).collect();
    c.sort_unstable();
    c.dedup();
    c
}

/// Mean AP over classes present in the ground truth.
pub fn mean_average_precision(images: &[ImageEval], iou_threshold: f64) -> Option<f64> {
    let classes = gt_classes(images);
    if classes.is_empty() {
        return None;
    }
    let sum: f64 = classes
        .iter()
        .map(|&c| average_precision(images, c, iou_threshold).unwrap_or(0.0))
        .sum();
    Some(sum / classes.len() as f64)
}

pub fn map50(images: &[ImageEval]) -> Option<f64> {
    mean_average_precision(images, 0.5)
}

pub fn map50_95(images: &[ImageEval]) -> Option<f64> {
    let ts = coco_thresholds();
    let vals: Option<Vec<f64>> = ts.iter().map(|&t| mean_average_precision(images, t)).collect();
    vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    /// TP / (TP + FP); zero when nothing was predicted.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// TP / (TP + FN); zero when there is no ground truth.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }
}

/// Matches each image after dropping predictions below `score_threshold`.
pub fn thresholded_matches(images: &[ImageEval], score_threshold: f64, iou_threshold: f64) -> Vec<(Vec<Detection>, MatchResult)> {
    images
        .iter()
        .map(|im| {
            let kept: Vec<Detection> = im.preds.iter().filter(|d| d.score >= score_threshold).cloned().collect();
            let m = match_detections(&kept, im.gts, iou_threshold);
            (kept, m)
        })
        .collect()
}

pub fn counts(matches: &[(Vec<Detection>, MatchResult)]) -> Counts {
    matches.iter().fold(Counts { tp: 0, fp: 0, fn_: 0 }, |c, (_, m)| Counts {
        tp: c.tp + m.true_positives.len(),
        fp: c.fp + m.false_positives.len(),
        fn_: c.fn_ + m.false_negatives.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub count: usize,
}

/// Distances between centers of matched predicted and ground-truth boxes.
pub fn center_deviation(pairs: &[(crate::scenegen::BBox, crate::scenegen::BBox)]) -> Option<DeviationStats> {
    if pairs.is_empty() {
        return None;
    }
    let mut d: Vec<f64> = pairs
        .iter()
        .map(|(p, g)| {
            let (a, b) = (p.center(), g.center());
            (a.0 - b.0).hypot(a.1 - b.1)
        })
        .collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let median = if n % 2 == 1 { d[n / 2] } else { (d[n / 2 - 1] + d[n / 2]) / 2.0 };
    Some(DeviationStats {
        mean: d.iter().sum::<f64>() / n as f64,
        median,
        max: d[n - 1],
        count: n,
    })
}

/// Matched `(pred, gt)` box pairs of one image.
pub fn matched_pairs(
    preds: &[Detection],
    gts: &[GtBox],
    m: &MatchResult,
) -> Vec<(crate::scenegen::BBox, crate::scenegen::BBox)> {
    m.true_positives.iter().map(|p| (preds[p.pred].bbox, gts[p.gt].bbox)).collect()
}

/// Dataset-level detection quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub map50: Option<f64>,
    pub map50_95: Option<f64>,
    pub center_deviation: Option<DeviationStats>,
    pub num_images: usize,
}

pub fn detection_metrics(images: &[ImageEval], score_threshold: f64) -> DetectionMetrics {
    let matches = thresholded_matches(images, score_threshold, 0.5);
    let c = counts(&matches);
    let pairs: Vec<_> = matches
        .iter()
        .zip(images)
        .flat_map(|((kept, m), im)| matched_pairs(kept, im.gts, m))
        .collect();
    DetectionMetrics {
        precision: c.precision(),
        recall: c.recall(),
        map50: map50(images),
        map50_95: map50_95(images),
        center_deviation: center_deviation(&pairs),
        num_images: images.len(),
    }
}

pub fn success_rate(trials: &[TrialResult]) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::EmptyInput("trial set"));
    }
    Ok(trials.iter().filter(|t| t.success).count() as f64 / trials.len() as f64)
}

/// Fraction of `true` flags.
pub fn success_fraction(flags: &[bool]) -> Result<f64> {
    if flags.is_empty() {
        return Err(Error::EmptyInput("trial set"));
    }
    Ok(flags.iter().filter(|&&s| s).count() as f64 / flags.len() as f64)
}
