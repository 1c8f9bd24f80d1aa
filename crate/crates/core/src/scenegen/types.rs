use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::LabelGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleDomain {
    Sim,
    Real,
}

impl StyleDomain {
    pub fn as_str(self) -> &'static str {
        match self {
            StyleDomain::Sim => "sim",
            StyleDomain::Real => "real",
        }
    }
}

/// Axis-aligned box in pixel coordinates. `x_max`/`y_max` are exclusive
/// edges, so a box covering pixel columns `3..=5` is `x_min = 3, x_max = 6`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max
            && self.y_min < self.y_max
            && [self.x_min, self.y_min, self.x_max, self.y_max]
                .iter()
                .all(|v| v.is_finite())
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        );
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Disc,
    Triangle,
}

impl ShapeKind {
    /// Each class is drawn with a fixed primitive so classes differ in
    /// silhouette as well as color.
    pub fn for_class(class_id: u16) -> Self {
        match (class_id.saturating_sub(1)) % 3 {
            0 => ShapeKind::Rectangle,
            1 => ShapeKind::Disc,
            _ => ShapeKind::Triangle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub class_id: u16,
    pub instance_id: u16,
    pub bbox: BBox,
    pub grasp_point: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    /// `(H, W)` in pixels.
    pub image_size: (usize, usize),
    pub num_classes: u16,
    pub object_count_range: (usize, usize),
    /// Side length range of each object's placement square, in pixels.
    pub object_size_range: (usize, usize),
    pub min_object_separation: f64,
    pub clutter_level: f64,
    pub style_domain: StyleDomain,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            image_size: (32, 32),
            num_classes: 3,
            object_count_range: (1, 3),
            object_size_range: (6, 12),
            min_object_separation: 2.0,
            clutter_level: 0.0,
            style_domain: StyleDomain::Real,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        let (lo, hi) = self.object_count_range;
        let (smin, smax) = self.object_size_range;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if h < 32 || w < 32 {
            return bad(format!("image size {h}x{w} below 32x32"));
        }
        if self.num_classes < 1 {
            return bad("num_classes must be at least 1".into());
        }
        if lo > hi {
            return bad(format!("object_count_range ({lo}, {hi}) has min > max"));
        }
        if hi > 255 {
            return bad("more than 255 objects cannot be stored in 8-bit maps".into());
        }
        if smin < 2 || smin > smax || smax > h.min(w) {
            return bad(format!("object_size_range ({smin}, {smax}) invalid for {h}x{w}"));
        }
        if !(0.0..=1.0).contains(&self.clutter_level) {
            return bad(format!("clutter_level {} outside [0, 1]", self.clutter_level));
        }
        if !(self.min_object_separation >= 0.0) {
            return bad("min_object_separation must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutScene {
    pub seed: u64,
    pub num_classes: u16,
    pub clutter_level: f64,
    pub semantic_map: LabelGrid,
    pub instance_map: LabelGrid,
    pub objects: Vec<ObjectRecord>,
    pub style_tag: StyleDomain,
}

impl LayoutScene {
    pub fn height(&self) -> usize {
        self.semantic_map.height
    }

    pub fn width(&self) -> usize {
        self.semantic_map.width
    }

    /// Checks every structural invariant by rescanning the label maps.
    pub fn check_invariants(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let fail = |m: String| Err(Error::InvalidConfig(format!("scene {}: {m}", self.seed)));
        if self.instance_map.height != h || self.instance_map.width != w {
            return fail("map sizes differ".into());
        }
        for (s, i) in self.semantic_map.data.iter().zip(&self.instance_map.data) {
            if (*s == 0) != (*i == 0) {
                return fail("semantic/instance support differs".into());
            }
            if *s > self.num_classes {
                return fail(format!("class {s} exceeds N={}", self.num_classes));
            }
        }
        let mut ids: Vec<u16> = self.objects.iter().map(|o| o.instance_id).collect();
        ids.sort_unstable();
        let before = ids.len();
        ids.dedup();
        if ids.len() != before {
            return fail("duplicate instance ids".into());
        }
        let mut present: Vec<u16> = self
            .instance_map
            .data
            .iter()
            .copied()
            .filter(|&v| v != 0)
            .collect();
        present.sort_unstable();
        present.dedup();
        if present != ids {
            return fail("instance ids do not match instance map".into());
        }
        for obj in &self.objects {
            let tight = tight_bounds(&self.instance_map, obj.instance_id)
                .expect("id present in map");
            if tight != obj.bbox {
                return fail(format!("bbox of instance {} is not tight", obj.instance_id));
            }
            if !obj.bbox.contains(obj.grasp_point.0, obj.grasp_point.1) {
                return fail(format!("grasp point of {} outside bbox", obj.instance_id));
            }
            for (s, i) in self.semantic_map.data.iter().zip(&self.instance_map.data) {
                if *i == obj.instance_id && *s != obj.class_id {
                    return fail(format!("instance {} has mixed classes", obj.instance_id));
                }
            }
        }
        Ok(())
    }

    /// One-hot layout over `{background, 1..N}` as `(N+1)×H×W` values.
    pub fn one_hot(&self) -> Vec<f32> {
        let k = self.num_classes as usize + 1;
        let hw = self.height() * self.width();
        let mut out = vec![0.0f32; k * hw];
        for (p, &c) in self.semantic_map.data.iter().enumerate() {
            out[c as usize * hw + p] = 1.0;
        }
        out
    }
}

/// Tight pixel bounds of all cells carrying `id`, by full rescan.
pub fn tight_bounds(grid: &LabelGrid, id: u16) -> Option<BBox> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for y in 0..grid.height {
        for x in 0..grid.width {
            if grid.get(y, x) == id {
                b = Some(match b {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    b.map(|(x0, y0, x1, y1)| BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64))
}
