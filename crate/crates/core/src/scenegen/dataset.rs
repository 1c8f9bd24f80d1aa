//! On-disk dataset layout:
//!
//! ```text
//! images/{id}_sim.png    images/{id}_real.png
//! labels/{id}_sem.png    labels/{id}_inst.png
//! manifest.json
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{LayoutScene, ObjectRecord, StyleDomain};
use crate::error::{Error, Result};
use crate::image::{Image, LabelGrid};

pub const MANIFEST_SCHEMA_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Renders stored alongside one scene. Either may be absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderedPair {
    pub sim: Option<Image>,
    pub real: Option<Image>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub style: StyleDomain,
    pub num_classes: u16,
    pub clutter_level: f64,
    pub sim_image: Option<String>,
    pub real_image: Option<String>,
    pub semantic_map: String,
    pub instance_map: String,
    pub objects: Vec<ObjectRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::FormatVersion {
                what: "dataset manifest",
                found: manifest.schema_version,
                expected: MANIFEST_SCHEMA_VERSION.into(),
            });
        }
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenes: Vec<LayoutScene>,
    pub images: Vec<RenderedPair>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

pub fn entry_id(index: usize) -> String {
    format!("{index:06}")
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes scenes, their renders and a manifest under `dir`.
pub fn export_dataset(
    scenes: &[LayoutScene],
    images: &[RenderedPair],
    dir: &Path,
) -> Result<Manifest> {
    if scenes.len() != images.len() {
        return Err(Error::PairingMismatch {
            scenes: scenes.len(),
            images: images.len(),
        });
    }
    create_dir(&dir.join("images"))?;
    create_dir(&dir.join("labels"))?;

    let entries = crate::par::try_map_indices(scenes.len(), |i| -> Result<ManifestEntry> {
        let (scene, pair) = (&scenes[i], &images[i]);
        let id = entry_id(i);
        let write_image = |img: &Option<Image>, tag: &str| -> Result<Option<String>> {
            img.as_ref()
                .map(|img| {
                    let rel = format!("images/{id}_{tag}.png");
                    img.save_png(&dir.join(&rel))?;
                    Ok(rel)
                })
                .transpose()
        };
        let sim_image = write_image(&pair.sim, "sim")?;
        let real_image = write_image(&pair.real, "real")?;
        let semantic_map = format!("labels/{id}_sem.png");
        let instance_map = format!("labels/{id}_inst.png");
        scene.semantic_map.save_png(&dir.join(&semantic_map))?;
        scene.instance_map.save_png(&dir.join(&instance_map))?;
        Ok(ManifestEntry {
            id,
            seed: scene.seed,
            style: scene.style_tag,
            num_classes: scene.num_classes,
            clutter_level: scene.clutter_level,
            sim_image,
            real_image,
            semantic_map,
            instance_map,
            objects: scene.objects.clone(),
        })
    })?;

    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION.into(),
        entries,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads a dataset written by [`export_dataset`]. Images come back
/// 8-bit quantized.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = Manifest::load(dir)?;
    let loaded = crate::par::try_map_indices(manifest.entries.len(), |i| {
        let e = &manifest.entries[i];
        let load_img = |rel: &Option<String>| rel.as_ref().map(|r| Image::load_png(&dir.join(r))).transpose();
        let scene = LayoutScene {
            seed: e.seed,
            num_classes: e.num_classes,
            clutter_level: e.clutter_level,
            semantic_map: LabelGrid::load_png(&dir.join(&e.semantic_map))?,
            instance_map: LabelGrid::load_png(&dir.join(&e.instance_map))?,
            objects: e.objects.clone(),
            style_tag: e.style,
        };
        let pair = RenderedPair {
            sim: load_img(&e.sim_image)?,
            real: load_img(&e.real_image)?,
        };
        Ok::<_, Error>((scene, pair))
    })?;
    let (scenes, images) = loaded.into_iter().unzip();
    Ok(Dataset { scenes, images })
}
