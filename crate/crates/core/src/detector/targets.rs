use super::boxes::{nms, Detection};
use super::config::DetectorConfig;
use crate::scenegen::{BBox, LayoutScene};

/// Per-image head maps, channel-major: `heat` is `(N, h, w)`, `size` and
/// `offset` are `(2, h, w)` with x first. Size and offset are in stride
/// units.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMaps {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub heat: Vec<f32>,
    pub size: Vec<f32>,
    pub offset: Vec<f32>,
}

impl HeadMaps {
    pub fn zeros(num_classes: usize, height: usize, width: usize) -> Self {
        let hw = height * width;
        HeadMaps {
            num_classes,
            height,
            width,
            heat: vec![0.0; num_classes * hw],
            size: vec![0.0; 2 * hw],
            offset: vec![0.0; 2 * hw],
        }
    }

    fn cell(&self, y: usize, x: usize) -> usize {
        y * self.width + x
    }

    pub fn heat_at(&self, class_index: usize, y: usize, x: usize) -> f32 {
        self.heat[class_index * self.height * self.width + self.cell(y, x)]
    }
}

/// Training targets: head maps plus a mask of the cells carrying a box.
#[derive(Debug, Clone, PartialEq)]
pub struct DetTargets {
    pub maps: HeadMaps,
    pub mask: Vec<f32>,
    pub num_objects: usize,
}

fn splat_sigma(w: f64, h: f64) -> f64 {
    ((w + h) / 12.0).max(0.5)
}

/// Encodes boxes given in the coordinates of an `image_size` image.
pub fn encode_boxes(
    boxes: &[(u16, BBox)],
    image_size: (usize, usize),
    config: &DetectorConfig,
) -> DetTargets {
    let (oh, ow) = config.output_size();
    let sx = config.input_size.1 as f64 / image_size.1 as f64 / config.stride as f64;
    let sy = config.input_size.0 as f64 / image_size.0 as f64 / config.stride as f64;
    let mut maps = HeadMaps::zeros(config.num_classes, oh, ow);
    let mut mask = vec![0.0; oh * ow];
    let hw = oh * ow;
    let mut num_objects = 0;
    for (class_id, b) in boxes {
        let ci = *class_id as usize;
        if ci == 0 || ci > config.num_classes || !b.is_valid() {
            continue;
        }
        let (cx, cy) = b.center();
        let (cx, cy) = (cx * sx, cy * sy);
        let (bw, bh) = (b.width() * sx, b.height() * sy);
        let gx = (cx.floor() as isize).clamp(0, ow as isize - 1) as usize;
        let gy = (cy.floor() as isize).clamp(0, oh as isize - 1) as usize;
        let sigma = splat_sigma(bw, bh);
        let reach = (3.0 * sigma).ceil() as isize;
        let plane = &mut maps.heat[(ci - 1) * hw..ci * hw];
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (y, x) = (gy as isize + dy, gx as isize + dx);
                if y < 0 || x < 0 || y >= oh as isize || x >= ow as isize {
                    continue;
                }
                let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp() as f32;
                let slot = &mut plane[y as usize * ow + x as usize];
                *slot = slot.max(v);
            }
        }
        let cell = gy * ow + gx;
        maps.size[cell] = bw as f32;
        maps.size[hw + cell] = bh as f32;
        maps.offset[cell] = (cx - gx as f64) as f32;
        maps.offset[hw + cell] = (cy - gy as f64) as f32;
        mask[cell] = 1.0;
        num_objects += 1;
    }
    DetTargets { maps, mask, num_objects }
}

pub fn encode_targets(scene: &LayoutScene, config: &DetectorConfig) -> DetTargets {
    let boxes: Vec<(u16, BBox)> = scene.objects.iter().map(|o| (o.class_id, o.bbox)).collect();
    encode_boxes(&boxes, (scene.height(), scene.width()), config)
}

/// Turns head maps into detections in the coordinates of an
/// `image_size` image: per-class 3×3 local maxima at or above the score
/// threshold, top-k per class, box decoding, clipping and NMS.
pub fn decode(maps: &HeadMaps, config: &DetectorConfig, image_size: (usize, usize)) -> Vec<Detection> {
    let (h, w) = (maps.height, maps.width);
    let stride = config.stride as f64;
    let rx = image_size.1 as f64 / config.input_size.1 as f64;
    let ry = image_size.0 as f64 / config.input_size.0 as f64;
    let hw = h * w;
    let frame = BBox::new(0.0, 0.0, image_size.1 as f64, image_size.0 as f64);
    let mut out = Vec::new();
    for c in 0..maps.num_classes {
        let mut peaks: Vec<(f32, usize, usize)> = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let v = maps.heat_at(c, y, x);
                if (v as f64) < config.score_threshold || v <= 0.0 {
                    continue;
                }
                let is_max = (y.saturating_sub(1)..(y + 2).min(h))
                    .all(|yy| (x.saturating_sub(1)..(x + 2).min(w)).all(|xx| maps.heat_at(c, yy, xx) <= v));
                if is_max {
                    peaks.push((v, y, x));
                }
            }
        }
        peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        peaks.truncate(config.top_k);
        for (v, y, x) in peaks {
            let cell = y * w + x;
            let cx = (x as f64 + maps.offset[cell] as f64) * stride;
            let cy = (y as f64 + maps.offset[hw + cell] as f64) * stride;
            let bw = (maps.size[cell] as f64).max(0.0) * stride;
            let bh = (maps.size[hw + cell] as f64).max(0.0) * stride;
            let b = BBox::new(
                (cx - bw / 2.0) * rx,
                (cy - bh / 2.0) * ry,
                (cx + bw / 2.0) * rx,
                (cy + bh / 2.0) * ry,
            );
            if let Some(clipped) = b.intersection(&frame) {
                if clipped.is_valid() {
                    out.push(Detection::new(c as u16 + 1, clipped, (v as f64).clamp(0.0, 1.0)));
                }
            }
        }
    }
    nms(&out, config.nms_iou_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DetectorConfig {
        DetectorConfig { input_size: (32, 32), stride: 4, ..Default::default() }
    }

    #[test]
    fn empty_scene_gives_zero_targets() {
        let t = encode_boxes(&[], (32, 32), &cfg());
        assert!(t.maps.heat.iter().all(|&v| v == 0.0));
        assert!(t.mask.iter().all(|&v| v == 0.0));
        assert_eq!(t.num_objects, 0);
    }

    #[test]
    fn centered_box_peaks_at_its_cell() {
        // center (10, 14) lies in cell (x=2, y=3) with stride 4
        let b = BBox::new(8.0, 12.0, 12.0, 16.0);
        let t = encode_boxes(&[(2, b)], (32, 32), &cfg());
        assert_eq!(t.maps.heat_at(1, 3, 2), 1.0);
        let max = t.maps.heat.iter().cloned().fold(0.0f32, f32::max);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn zero_maps_decode_to_nothing() {
        let m = HeadMaps::zeros(3, 8, 8);
        assert!(decode(&m, &cfg(), (32, 32)).is_empty());
    }

    #[test]
    fn hand_built_peak_rescales_under_downscaling() {
        // network sees 32×32, original image is 64×64
        let c = cfg();
        let mut m = HeadMaps::zeros(3, 8, 8);
        let hw = 64;
        let cell = 5 * 8 + 3;
        m.heat[hw + cell] = 0.9;
        m.offset[cell] = 0.5;
        m.offset[hw + cell] = 0.25;
        m.size[cell] = 2.0;
        m.size[hw + cell] = 1.0;
        let dets = decode(&m, &c, (64, 64));
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        assert_eq!(d.class_id, 2);
        assert!((d.score - 0.9).abs() < 1e-6);
        // center in input px (14, 21), size (8, 4); doubled for the original
        assert_eq!(d.bbox, BBox::new(20.0, 38.0, 36.0, 46.0));
    }
}
