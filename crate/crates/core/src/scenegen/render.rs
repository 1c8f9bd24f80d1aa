//! Style renderers. Both styles are evaluated as a color field over
//! continuous world coordinates, so full-scene renders and camera crops
//! agree wherever they overlap.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::types::{LayoutScene, StyleDomain};
use crate::image::Image;
use crate::rng;

const SIM_BACKGROUND: [f32; 3] = [-0.2, -0.2, -0.2];
const REAL_BACKGROUND: [f32; 3] = [0.15, -0.05, -0.3];
pub const SENSOR_NOISE_SIGMA: f32 = 0.05;

const SIM_PALETTE: [[f32; 3]; 6] = [
    [0.85, -0.6, -0.6],
    [-0.6, 0.75, -0.5],
    [-0.55, -0.45, 0.85],
    [0.8, 0.75, -0.7],
    [0.7, -0.6, 0.75],
    [-0.6, 0.7, 0.75],
];

pub fn sim_color(class_id: u16) -> [f32; 3] {
    SIM_PALETTE[(class_id as usize - 1) % SIM_PALETTE.len()]
}

/// The target-domain color of a class: a desaturated, warm-shifted
/// version of its simulator color.
pub fn real_color(class_id: u16) -> [f32; 3] {
    let s = sim_color(class_id);
    let mean = (s[0] + s[1] + s[2]) / 3.0;
    let shift = [0.12, 0.02, -0.12];
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = mean + 0.7 * (s[c] - mean) + shift[c];
    }
    out
}

fn hash2(seed: u64, x: i64, y: i64) -> f32 {
    let mut z = seed ^ (x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z ^= (y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 31)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 29)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 32;
    (z >> 40) as f32 / (1u64 << 24) as f32
}

/// Bilinear value noise in `[-1, 1]` with unit lattice spacing.
fn value_noise(seed: u64, x: f64, y: f64) -> f32 {
    let (xf, yf) = (x.floor(), y.floor());
    let (ix, iy) = (xf as i64, yf as i64);
    let (tx, ty) = ((x - xf) as f32, (y - yf) as f32);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let a = hash2(seed, ix, iy);
    let b = hash2(seed, ix + 1, iy);
    let c = hash2(seed, ix, iy + 1);
    let d = hash2(seed, ix + 1, iy + 1);
    let v = (a * (1.0 - sx) + b * sx) * (1.0 - sy) + (c * (1.0 - sx) + d * sx) * sy;
    2.0 * v - 1.0
}

#[derive(Debug, Clone)]
struct ClutterBlob {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    color: [f32; 3],
}

/// Precomputed per-scene rendering state for one style.
#[derive(Debug, Clone)]
pub struct SceneRenderer<'a> {
    scene: &'a LayoutScene,
    style: StyleDomain,
    tints: Vec<[f32; 3]>,
    gradient: (f32, f32),
    clutter: Vec<ClutterBlob>,
    texture_seed: u64,
}

impl<'a> SceneRenderer<'a> {
    pub fn new(scene: &'a LayoutScene, style: StyleDomain) -> Self {
        let mut rng = rng::stream(scene.seed, "render-real");
        let max_id = scene.objects.iter().map(|o| o.instance_id).max().unwrap_or(0);
        let tints = (0..=max_id)
            .map(|_| {
                let t: f32 = rng.random_range(-0.08..0.08);
                [t, t, t]
            })
            .collect();
        let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let strength: f32 = rng.random_range(0.1..0.25);
        let (h, w) = (scene.height() as f64, scene.width() as f64);
        let diag = (h * h + w * w).sqrt() as f32;
        let gradient = (
            strength * angle.cos() / diag,
            strength * angle.sin() / diag,
        );
        let n_clutter = (scene.clutter_level * h * w / 96.0).round() as usize;
        let clutter = (0..n_clutter)
            .map(|_| ClutterBlob {
                cx: rng.random_range(0.0..w),
                cy: rng.random_range(0.0..h),
                rx: rng.random_range(0.7..3.0),
                ry: rng.random_range(0.7..3.0),
                color: [
                    rng.random_range(-0.8..0.8),
                    rng.random_range(-0.8..0.8),
                    rng.random_range(-0.8..0.8),
                ],
            })
            .collect();
        SceneRenderer {
            scene,
            style,
            tints,
            gradient,
            clutter,
            texture_seed: rng::derive_seed(scene.seed, "texture"),
        }
    }

    /// Noise-free color at world point `(x, y)`.
    pub fn color_at(&self, x: f64, y: f64) -> [f32; 3] {
        let scene = self.scene;
        let (h, w) = (scene.height(), scene.width());
        let inside = x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64;
        let (class, inst) = if inside {
            let (px, py) = (x as usize, y as usize);
            (scene.semantic_map.get(py, px), scene.instance_map.get(py, px))
        } else {
            (0, 0)
        };
        match self.style {
            StyleDomain::Sim => {
                if class == 0 {
                    SIM_BACKGROUND
                } else {
                    sim_color(class)
                }
            }
            StyleDomain::Real => {
                let mut col = if class == 0 {
                    let mut col = REAL_BACKGROUND;
                    let grain = 0.08 * value_noise(self.texture_seed, x * 0.25, y * 1.5);
                    col.iter_mut().for_each(|v| *v += grain);
                    if let Some(b) = self.clutter.iter().rev().find(|b| {
                        ((x - b.cx) / b.rx).powi(2) + ((y - b.cy) / b.ry).powi(2) <= 1.0
                    }) {
                        col = b.color;
                    }
                    col
                } else {
                    let mut col = real_color(class);
                    let tint = self.tints[inst as usize];
                    let tex = 0.12
                        * value_noise(self.texture_seed ^ u64::from(inst), x * 0.6, y * 0.6);
                    for c in 0..3 {
                        col[c] += tint[c] + tex;
                    }
                    col
                };
                let light = self.gradient.0 * (x as f32 - w as f32 / 2.0)
                    + self.gradient.1 * (y as f32 - h as f32 / 2.0);
                col.iter_mut().for_each(|v| *v += light);
                col
            }
        }
    }
}

pub(crate) fn add_sensor_noise(img: &mut Image, seed: u64) {
    let mut rng = rng::rng_from(seed);
    let normal = Normal::new(0.0f32, SENSOR_NOISE_SIGMA).expect("valid sigma");
    for v in img.data.iter_mut() {
        *v += normal.sample(&mut rng);
    }
}

pub(crate) fn clamp_unit(img: &mut Image) {
    img.data.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
}

/// Renders the full scene at its native resolution.
pub fn render(scene: &LayoutScene, style: StyleDomain) -> Image {
    let (h, w) = (scene.height(), scene.width());
    let renderer = SceneRenderer::new(scene, style);
    let mut img = Image::new(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let col = renderer.color_at(x as f64 + 0.5, y as f64 + 0.5);
            for (c, v) in col.into_iter().enumerate() {
                img.set(c, y, x, v);
            }
        }
    }
    if style == StyleDomain::Real {
        add_sensor_noise(&mut img, rng::derive_seed(scene.seed, "sensor-full"));
    }
    clamp_unit(&mut img);
    img
}
