use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::detector::{iou, rank_order, Detection};
use crate::scenegen::{BBox, LayoutScene};

/// A ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub class_id: u16,
    pub bbox: BBox,
}

impl GtBox {
    pub fn new(class_id: u16, bbox: BBox) -> Self {
        GtBox { class_id, bbox }
    }

    pub fn from_scene(scene: &LayoutScene) -> Vec<GtBox> {
        scene.objects.iter().map(|o| GtBox::new(o.class_id, o.bbox)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

/// Assignment of one image's predictions to its ground truth. Indices
/// refer to the input slices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub true_positives: Vec<MatchPair>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

/// Prediction indices in matching order: by class, then score rank.
pub fn ranked_indices(preds: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&a, &b| match rank_order(&preds[a], &preds[b]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    idx
}

/// Greedy matching: predictions in score order each take the unmatched
/// same-class ground truth of highest IoU at or above the threshold,
/// preferring the lower ground-truth index on ties.
pub fn match_detections(preds: &[Detection], gts: &[GtBox], iou_threshold: f64) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut out = MatchResult::default();
    for p in ranked_indices(preds) {
        let pred = &preds[p];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.class_id != pred.class_id {
                continue;
            }
            let v = iou(&pred.bbox, &gt.bbox).unwrap_or(0.0);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, v)) => {
                taken[g] = true;
                out.true_positives.push(MatchPair { pred: p, gt: g, iou: v });
            }
            None => out.false_positives.push(p),
        }
    }
    out.false_negatives = (0..gts.len()).filter(|&g| !taken[g]).collect();
    out
}
