//! Brute-force reference implementations shared by the integration tests
//! and the acceptance suite.
#![allow(dead_code)]

pub mod losses;
pub mod suites;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simgrasp::detector::Detection;
use simgrasp::eval::GtBox;
use simgrasp::scenegen::BBox;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Integer-cornered box inside a `size × size` grid.
pub fn random_box(r: &mut ChaCha8Rng, size: i32) -> BBox {
    let x0 = r.random_range(0..size - 1);
    let y0 = r.random_range(0..size - 1);
    let x1 = r.random_range(x0 + 1..=size.min(x0 + 8));
    let y1 = r.random_range(y0 + 1..=size.min(y0 + 8));
    BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64)
}

/// Scores from a small set so that ties occur.
pub fn random_detections(r: &mut ChaCha8Rng, n: usize, classes: u16) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let score = r.random_range(1..=10) as f64 / 10.0;
            Detection::new(r.random_range(1..=classes), random_box(r, 16), score)
        })
        .collect()
}

pub fn random_gts(r: &mut ChaCha8Rng, n: usize, classes: u16) -> Vec<GtBox> {
    (0..n).map(|_| GtBox::new(r.random_range(1..=classes), random_box(r, 16))).collect()
}

/// IoU of integer-cornered boxes by counting unit cells.
pub fn iou_by_cells(a: &BBox, b: &BBox) -> f64 {
    let cells = |bx: &BBox| {
        let mut v = Vec::new();
        for y in bx.y_min as i32..bx.y_max as i32 {
            for x in bx.x_min as i32..bx.x_max as i32 {
                v.push((x, y));
            }
        }
        v
    };
    let ca = cells(a);
    let cb = cells(b);
    let inter = ca.iter().filter(|c| cb.contains(c)).count();
    let union = ca.len() + cb.len() - inter;
    inter as f64 / union as f64
}

/// Position of each detection in the score order (score desc, x_min asc,
/// y_min asc, input index asc), found by counting how many precede it.
pub fn rank_positions(d: &[Detection]) -> Vec<usize> {
    let before = |j: usize, i: usize| {
        let (a, b) = (&d[j], &d[i]);
        (a.score > b.score)
            || (a.score == b.score && a.bbox.x_min < b.bbox.x_min)
            || (a.score == b.score && a.bbox.x_min == b.bbox.x_min && a.bbox.y_min < b.bbox.y_min)
            || (a.score == b.score && a.bbox.x_min == b.bbox.x_min && a.bbox.y_min == b.bbox.y_min && j < i)
    };
    (0..d.len()).map(|i| (0..d.len()).filter(|&j| j != i && before(j, i)).count()).collect()
}

pub fn score_order(d: &[Detection]) -> Vec<usize> {
    let pos = rank_positions(d);
    let mut order = vec![0; d.len()];
    for (i, &p) in pos.iter().enumerate() {
        order[p] = i;
    }
    order
}

/// Classic quadratic suppression with a suppressed-flag array.
pub fn nms_reference(d: &[Detection], thr: f64) -> Vec<Detection> {
    let order = score_order(d);
    let mut suppressed = vec![false; d.len()];
    let mut out = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        out.push(d[i].clone());
        for &j in &order[k + 1..] {
            if d[j].class_id == d[i].class_id && iou_by_cells(&d[i].bbox, &d[j].bbox) > thr {
                suppressed[j] = true;
            }
        }
    }
    out
}

/// Greedy assignment from a full IoU matrix: returns `(pred, gt)` pairs,
/// unmatched predictions and unmatched ground truth.
pub fn match_reference(p: &[Detection], g: &[GtBox], thr: f64) -> (Vec<(usize, usize)>, Vec<usize>, Vec<usize>) {
    let m: Vec<Vec<f64>> = p
        .iter()
        .map(|d| g.iter().map(|t| if t.class_id == d.class_id { iou_by_cells(&d.bbox, &t.bbox) } else { -1.0 }).collect())
        .collect();
    let mut used = vec![false; g.len()];
    let mut tps = Vec::new();
    let mut fps = Vec::new();
    for i in score_order(p) {
        let mut best: Option<usize> = None;
        for j in 0..g.len() {
            if used[j] || m[i][j] < thr {
                continue;
            }
            if best.is_none() || m[i][j] > m[i][best.unwrap()] {
                best = Some(j);
            }
        }
        match best {
            Some(j) => {
                used[j] = true;
                tps.push((i, j));
            }
            None => fps.push(i),
        }
    }
    let fns = (0..g.len()).filter(|&j| !used[j]).collect();
    (tps, fps, fns)
}

/// AP by enumerating every score cutoff: the interpolated precision at
/// recall level `k/100` is the best precision of any cutoff reaching it.
pub fn ap_by_cutoffs(ranked_tp: &[bool], num_gt: usize) -> f64 {
    let mut points = Vec::new();
    for cut in 1..=ranked_tp.len() {
        let tp = ranked_tp[..cut].iter().filter(|&&t| t).count();
        points.push((tp, cut));
    }
    let mut sum = 0.0;
    for k in 0..=100usize {
        let best = points
            .iter()
            .filter(|(tp, _)| tp * 100 >= k * num_gt)
            .map(|(tp, cut)| *tp as f64 / *cut as f64)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

/// Dataset AP of one class via the reference matcher and cutoff oracle.
pub fn ap_reference(images: &[(Vec<Detection>, Vec<GtBox>)], class: u16, thr: f64) -> Option<f64> {
    let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut num_gt = 0;
    for (im, (p, g)) in images.iter().enumerate() {
        let p: Vec<Detection> = p.iter().filter(|d| d.class_id == class).cloned().collect();
        let g: Vec<GtBox> = g.iter().filter(|t| t.class_id == class).copied().collect();
        num_gt += g.len();
        let (tps, _, _) = match_reference(&p, &g, thr);
        let pos = rank_positions(&p);
        for i in 0..p.len() {
            ranked.push((p[i].score, im, pos[i], tps.iter().any(|&(a, _)| a == i)));
        }
    }
    if num_gt == 0 {
        return None;
    }
    // insertion sort on (score desc, image, rank)
    let mut sorted: Vec<(f64, usize, usize, bool)> = Vec::new();
    for item in ranked {
        let at = sorted
            .iter()
            .position(|s| item.0 > s.0 || (item.0 == s.0 && (item.1, item.2) < (s.1, s.2)))
            .unwrap_or(sorted.len());
        sorted.insert(at, item);
    }
    let flags: Vec<bool> = sorted.iter().map(|s| s.3).collect();
    Some(ap_by_cutoffs(&flags, num_gt))
}

pub fn map_reference(images: &[(Vec<Detection>, Vec<GtBox>)], thr: f64) -> Option<f64> {
    let mut classes: Vec<u16> = images.iter().flat_map(|(_, g)| g.iter().map(|t| t.class_id)).collect();
    classes.sort();
    classes.dedup();
    if classes.is_empty() {
        return None;
    }
    Some(classes.iter().map(|&c| ap_reference(images, c, thr).unwrap()).sum::<f64>() / classes.len() as f64)
}

pub fn map50_95_reference(images: &[(Vec<Detection>, Vec<GtBox>)]) -> Option<f64> {
    let mut sum = 0.0;
    for k in 0..10 {
        sum += map_reference(images, (50 + 5 * k) as f64 / 100.0)?;
    }
    Some(sum / 10.0)
}

/// `(mean, median, max)` of center distances.
pub fn deviation_reference(pairs: &[(BBox, BBox)]) -> Option<(f64, f64, f64)> {
    if pairs.is_empty() {
        return None;
    }
    let mut d: Vec<f64> = pairs
        .iter()
        .map(|(a, b)| {
            let dx = (a.x_min + a.x_max) / 2.0 - (b.x_min + b.x_max) / 2.0;
            let dy = (a.y_min + a.y_max) / 2.0 - (b.y_min + b.y_max) / 2.0;
            (dx * dx + dy * dy).sqrt()
        })
        .collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let max = d.iter().cloned().fold(0.0, f64::max);
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = d.len();
    let median = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    Some((mean, median, max))
}
