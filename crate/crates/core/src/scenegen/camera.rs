use serde::{Deserialize, Serialize};

use super::render::{add_sensor_noise, clamp_unit, SceneRenderer};
use super::types::{BBox, LayoutScene, ObjectRecord, StyleDomain};
use crate::grasp::RobotState;
use crate::image::Image;
use crate::rng;

/// Boxes keeping less than this fraction of their area after clipping to a
/// view are dropped.
pub const DEFAULT_MIN_VISIBLE_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    Global,
    Local,
}

/// Affine world → pixel map `u = su·x + tu`, `v = sv·y + tv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewTransform {
    pub su: f64,
    pub sv: f64,
    pub tu: f64,
    pub tv: f64,
}

impl ViewTransform {
    pub const IDENTITY: ViewTransform = ViewTransform {
        su: 1.0,
        sv: 1.0,
        tu: 0.0,
        tv: 0.0,
    };

    pub fn project(&self, x: f64, y: f64) -> (f64, f64) {
        (self.su * x + self.tu, self.sv * y + self.tv)
    }

    pub fn unproject(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.tu) / self.su, (v - self.tv) / self.sv)
    }

    pub fn project_box(&self, b: &BBox) -> BBox {
        let (x0, y0) = self.project(b.x_min, b.y_min);
        let (x1, y1) = self.project(b.x_max, b.y_max);
        BBox::new(x0, y0, x1, y1)
    }

    pub fn unproject_box(&self, b: &BBox) -> BBox {
        let (x0, y0) = self.unproject(b.x_min, b.y_min);
        let (x1, y1) = self.unproject(b.x_max, b.y_max);
        BBox::new(x0, y0, x1, y1)
    }
}

/// A camera rigidly mounted on the robot: the global camera is centered on
/// the base, the local camera on the gripper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub view: ViewKind,
    /// Pixels per world unit along x and y.
    pub scale: (f64, f64),
    /// `(h, w)` in pixels.
    pub crop_size: (usize, usize),
    #[serde(default = "default_min_visible")]
    pub min_visible_fraction: f64,
}

fn default_min_visible() -> f64 {
    DEFAULT_MIN_VISIBLE_FRACTION
}

impl CameraModel {
    pub fn new(view: ViewKind, scale: f64, crop_size: (usize, usize)) -> Self {
        CameraModel {
            view,
            scale: (scale, scale),
            crop_size,
            min_visible_fraction: DEFAULT_MIN_VISIBLE_FRACTION,
        }
    }

    pub fn anchor(&self, robot: &RobotState) -> (f64, f64) {
        match self.view {
            ViewKind::Global => robot.base_position,
            ViewKind::Local => robot.gripper_world(),
        }
    }

    /// World → pixel transform placing the mount anchor at the crop center.
    pub fn world_to_pixel(&self, robot: &RobotState) -> ViewTransform {
        let (ax, ay) = self.anchor(robot);
        let (h, w) = self.crop_size;
        ViewTransform {
            su: self.scale.0,
            sv: self.scale.1,
            tu: w as f64 / 2.0 - self.scale.0 * ax,
            tv: h as f64 / 2.0 - self.scale.1 * ay,
        }
    }

    /// The image point where an object under the mount anchor appears.
    pub fn reference_point(&self) -> (f64, f64) {
        (self.crop_size.1 as f64 / 2.0, self.crop_size.0 as f64 / 2.0)
    }
}

/// One camera's rendered crop and the ground-truth boxes visible in it.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub image: Image,
    pub objects: Vec<ObjectRecord>,
    pub transform: ViewTransform,
}

/// Transforms scene boxes into view pixels, clips them to the crop and
/// drops those keeping less than `min_visible` of their projected area.
pub fn visible_objects(
    objects: &[ObjectRecord],
    transform: &ViewTransform,
    crop_size: (usize, usize),
    min_visible: f64,
) -> Vec<ObjectRecord> {
    let frame = BBox::new(0.0, 0.0, crop_size.1 as f64, crop_size.0 as f64);
    objects
        .iter()
        .filter_map(|obj| {
            let full = transform.project_box(&obj.bbox);
            let clipped = full.intersection(&frame)?;
            if clipped.area() < min_visible * full.area() {
                return None;
            }
            let (gx, gy) = transform.project(obj.grasp_point.0, obj.grasp_point.1);
            Some(ObjectRecord {
                bbox: clipped,
                grasp_point: (
                    gx.clamp(clipped.x_min, clipped.x_max),
                    gy.clamp(clipped.y_min, clipped.y_max),
                ),
                ..obj.clone()
            })
        })
        .collect()
}

/// Renders a camera's crop in the real style plus its ground-truth boxes.
pub fn render_view(scene: &LayoutScene, robot: &RobotState, camera: &CameraModel) -> CameraView {
    let transform = camera.world_to_pixel(robot);
    let (h, w) = camera.crop_size;
    let renderer = SceneRenderer::new(scene, StyleDomain::Real);
    let mut image = Image::new(3, h, w);
    for v in 0..h {
        for u in 0..w {
            let (x, y) = transform.unproject(u as f64 + 0.5, v as f64 + 0.5);
            for (c, val) in renderer.color_at(x, y).into_iter().enumerate() {
                image.set(c, v, u, val);
            }
        }
    }
    let mut noise_seed = rng::derive_seed(scene.seed, "sensor-view");
    for (i, part) in [
        transform.su,
        transform.sv,
        transform.tu,
        transform.tv,
        camera.view as u8 as f64,
    ]
    .iter()
    .enumerate()
    {
        noise_seed = rng::derive_indexed(noise_seed ^ part.to_bits(), "view-part", i as u64);
    }
    add_sensor_noise(&mut image, noise_seed);
    clamp_unit(&mut image);
    let objects = visible_objects(
        &scene.objects,
        &transform,
        camera.crop_size,
        camera.min_visible_fraction,
    );
    CameraView {
        image,
        objects,
        transform,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn project_unproject_round_trip() {
        let t = ViewTransform {
            su: 0.37,
            sv: 2.5,
            tu: -13.25,
            tv: 7.0,
        };
        for &(x, y) in &[(0.0, 0.0), (12.5, -3.0), (1e3, 77.7)] {
            let (u, v) = t.project(x, y);
            let (x2, y2) = t.unproject(u, v);
            assert!((x - x2).abs() < 1e-9 && (y - y2).abs() < 1e-9);
        }
    }

    #[test]
    fn clipping_threshold() {
        let obj = ObjectRecord {
            class_id: 1,
            instance_id: 1,
            bbox: BBox::new(-7.0, 0.0, 3.0, 10.0),
            grasp_point: (-2.0, 5.0),
        };
        // 30% visible: kept at the default 25% threshold, dropped at 35%.
        let kept = visible_objects(
            std::slice::from_ref(&obj),
            &ViewTransform::IDENTITY,
            (32, 32),
            0.25,
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].bbox, BBox::new(0.0, 0.0, 3.0, 10.0));
        assert_eq!(kept[0].grasp_point, (0.0, 5.0));
        let dropped = visible_objects(
            std::slice::from_ref(&obj),
            &ViewTransform::IDENTITY,
            (32, 32),
            0.35,
        );
        assert!(dropped.is_empty());
        // 20% visible: below the default threshold.
        let sliver = ObjectRecord {
            bbox: BBox::new(-8.0, 0.0, 2.0, 10.0),
            ..obj
        };
        let dropped = visible_objects(&[sliver], &ViewTransform::IDENTITY, (32, 32), 0.25);
        assert!(dropped.is_empty());
    }
}
