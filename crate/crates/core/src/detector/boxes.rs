use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegen::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: u16,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(class_id: u16, bbox: BBox, score: f64) -> Self {
        Detection { class_id, bbox, score }
    }

    pub fn is_valid(&self) -> bool {
        self.bbox.is_valid() && (0.0..=1.0).contains(&self.score)
    }
}

fn check(b: &BBox) -> Result<()> {
    if b.is_valid() {
        Ok(())
    } else {
        Err(Error::DegenerateBox(b.to_array()))
    }
}

/// Intersection over union of two valid boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    check(a)?;
    check(b)?;
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Descending score, then smaller `x_min`, then smaller `y_min`.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
}

/// Greedy per-class suppression. Boxes that fail validation never survive.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut ranked: Vec<&Detection> = dets.iter().filter(|d| d.bbox.is_valid()).collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    for d in ranked {
        let suppressed = kept.iter().any(|k| {
            k.class_id == d.class_id && iou(&k.bbox, &d.bbox).is_ok_and(|v| v > iou_threshold)
        });
        if !suppressed {
            kept.push(d.clone());
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_hand_cases() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 6.0, 6.0)).unwrap(), 0.0);
        let v = iou(&a, &BBox::new(1.0, 0.0, 3.0, 2.0)).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_rejects_degenerate() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert!(matches!(
            iou(&a, &BBox::new(1.0, 1.0, 1.0, 3.0)),
            Err(Error::DegenerateBox(_))
        ));
    }

    #[test]
    fn nms_keeps_best_of_duplicates() {
        let b = BBox::new(0.0, 0.0, 4.0, 4.0);
        let out = nms(&[Detection::new(1, b, 0.8), Detection::new(1, b, 0.9)], 0.5);
        assert_eq!(out, vec![Detection::new(1, b, 0.9)]);
        let single = vec![Detection::new(2, b, 0.4)];
        assert_eq!(nms(&single, 0.5), single);
    }

    #[test]
    fn nms_is_per_class() {
        let b = BBox::new(0.0, 0.0, 4.0, 4.0);
        let out = nms(&[Detection::new(1, b, 0.9), Detection::new(2, b, 0.8)], 0.5);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn ties_break_on_position() {
        let a = Detection::new(1, BBox::new(1.0, 0.0, 5.0, 4.0), 0.5);
        let b = Detection::new(1, BBox::new(0.0, 0.0, 4.0, 4.0), 0.5);
        let out = nms(&[a.clone(), b.clone()], 0.3);
        assert_eq!(out, vec![b]);
    }
}
