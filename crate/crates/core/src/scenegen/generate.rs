use rand::Rng as _;

use super::types::{tight_bounds, BBox, LayoutScene, ObjectRecord, SceneSpec, ShapeKind};
use crate::error::{Error, Result};
use crate::image::LabelGrid;
use crate::rng;

const ATTEMPTS_PER_OBJECT: usize = 200;

/// Chebyshev gap between two boxes; zero or negative when they touch or overlap.
fn gap(a: &BBox, b: &BBox) -> f64 {
    let dx = (b.x_min - a.x_max).max(a.x_min - b.x_max);
    let dy = (b.y_min - a.y_max).max(a.y_min - b.y_max);
    dx.max(dy)
}

/// Whether pixel `(x, y)` of a `size`-square footprint belongs to `shape`.
/// Tested at pixel centers in footprint-local coordinates.
pub(crate) fn covers(shape: ShapeKind, size: usize, x: usize, y: usize) -> bool {
    let s = size as f64;
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    match shape {
        ShapeKind::Rectangle => true,
        ShapeKind::Disc => {
            let r = s / 2.0;
            (px - r).powi(2) + (py - r).powi(2) <= r * r
        }
        ShapeKind::Triangle => {
            // Apex at top-center, base along the bottom edge.
            let half_width = 0.5 * s * (py / s);
            (px - s / 2.0).abs() <= half_width
        }
    }
}

/// Generates a labeled scene of non-overlapping primitives.
///
/// Placement is rejection sampling over footprint squares; the result is a
/// pure function of `(spec, seed)`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<LayoutScene> {
    spec.validate()?;
    let (h, w) = spec.image_size;
    let mut rng = rng::stream(seed, "scene");
    let (lo, hi) = spec.object_count_range;
    let count = rng.random_range(lo..=hi);
    let (smin, smax) = spec.object_size_range;

    let mut semantic_map = LabelGrid::new(h, w);
    let mut instance_map = LabelGrid::new(h, w);
    let mut footprints: Vec<BBox> = Vec::with_capacity(count);
    let mut objects = Vec::with_capacity(count);

    for k in 0..count {
        let class_id = rng.random_range(1..=spec.num_classes);
        let shape = ShapeKind::for_class(class_id);
        let mut placed = None;
        for _ in 0..ATTEMPTS_PER_OBJECT {
            let size = rng.random_range(smin..=smax);
            let x0 = rng.random_range(0..=w - size);
            let y0 = rng.random_range(0..=h - size);
            let fp = BBox::new(x0 as f64, y0 as f64, (x0 + size) as f64, (y0 + size) as f64);
            if footprints
                .iter()
                .all(|other| gap(&fp, other) >= spec.min_object_separation.max(0.0))
            {
                placed = Some((x0, y0, size, fp));
                break;
            }
        }
        let Some((x0, y0, size, fp)) = placed else {
            return Err(Error::UnplaceableScene {
                seed,
                requested: count,
                attempts: ATTEMPTS_PER_OBJECT,
            });
        };
        footprints.push(fp);

        let instance_id = (k + 1) as u16;
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for dy in 0..size {
            for dx in 0..size {
                if covers(shape, size, dx, dy) {
                    let (x, y) = (x0 + dx, y0 + dy);
                    semantic_map.set(y, x, class_id);
                    instance_map.set(y, x, instance_id);
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1;
                }
            }
        }
        let bbox = tight_bounds(&instance_map, instance_id).expect("shape covers pixels");
        objects.push(ObjectRecord {
            class_id,
            instance_id,
            bbox,
            grasp_point: (sx / n as f64, sy / n as f64),
        });
    }

    Ok(LayoutScene {
        seed,
        num_classes: spec.num_classes,
        clutter_level: spec.clutter_level,
        semantic_map,
        instance_map,
        objects,
        style_tag: spec.style_domain,
    })
}
