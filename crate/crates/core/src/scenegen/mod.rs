//! Procedural labeled scenes, two rendering styles and robot-mounted
//! camera views.

mod camera;
mod dataset;
mod generate;
mod render;
mod types;

pub use camera::{
    render_view, visible_objects, CameraModel, CameraView, ViewKind, ViewTransform,
    DEFAULT_MIN_VISIBLE_FRACTION,
};
pub use dataset::{
    entry_id, export_dataset, load_dataset, Dataset, Manifest, ManifestEntry, RenderedPair,
    MANIFEST_FILE, MANIFEST_SCHEMA_VERSION,
};
pub use generate::generate_scene;
pub use render::{real_color, render, sim_color, SceneRenderer, SENSOR_NOISE_SIGMA};
pub use types::{
    tight_bounds, BBox, LayoutScene, ObjectRecord, SceneSpec, ShapeKind, StyleDomain,
};

/// Generates one scene per seed, fanning out over scene indices.
pub fn generate_scenes(
    spec: &SceneSpec,
    seeds: &[u64],
) -> crate::error::Result<Vec<LayoutScene>> {
    crate::par::try_map_indices(seeds.len(), |i| generate_scene(spec, seeds[i]))
}
