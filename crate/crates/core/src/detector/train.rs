use std::fs;
use std::path::Path;

use candle_core::DType;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::boxes::Detection;
use super::config::DetectorConfig;
use super::model::{detection_loss, DetectorModel, TargetTensors};
use super::targets::encode_boxes;
use crate::batch;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::jsonl;
use crate::nn::{scalar, Adam, AdamConfig, ParamSnapshot};
use crate::par;
use crate::rng;
use crate::scenegen::{BBox, LayoutScene};

pub const DETECTOR_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetLossRecord {
    pub step: usize,
    pub epoch: usize,
    pub total: f64,
    pub heat: f64,
    pub size: f64,
    pub offset: f64,
}

fn flip_image(im: &Image) -> Image {
    let mut out = im.clone();
    for c in 0..im.channels {
        for y in 0..im.height {
            for x in 0..im.width {
                out.set(c, y, x, im.get(c, y, im.width - 1 - x));
            }
        }
    }
    out
}

fn scene_boxes(scene: &LayoutScene, flip: bool) -> Vec<(u16, BBox)> {
    let w = scene.width() as f64;
    scene
        .objects
        .iter()
        .map(|o| {
            let b = o.bbox;
            let b = if flip { BBox::new(w - b.x_max, b.y_min, w - b.x_min, b.y_max) } else { b };
            (o.class_id, b)
        })
        .collect()
}

/// Trains a fresh detector on images paired with their layouts. Each
/// epoch reshuffles; `on_epoch` sees the model after every epoch.
pub fn train_detector(
    images: &[Image],
    scenes: &[LayoutScene],
    config: &DetectorConfig,
    dtype: DType,
    mut on_epoch: impl FnMut(usize, &DetectorModel) -> Result<()>,
) -> Result<(DetectorModel, Vec<DetLossRecord>)> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyInput("detector training set"));
    }
    if images.len() != scenes.len() {
        return Err(Error::PairingMismatch { scenes: scenes.len(), images: images.len() });
    }
    let model = DetectorModel::new(config, dtype)?;
    let mut opt = Adam::new(model.params(), AdamConfig::with_lr(config.lr))?;
    let (ih, iw) = config.input_size;
    let resized = par::map_slice(images, |im| im.resize(ih, iw));
    let n = images.len();
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::rng_from(rng::derive_indexed(config.seed, "detector-shuffle", epoch as u64)));
        for chunk in order.chunks(config.batch_size) {
            let mut flips = rng::rng_from(rng::derive_indexed(config.seed, "detector-flip", step as u64));
            let mut batch_images = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let flip = config.augment && flips.random_bool(0.5);
                batch_images.push(if flip { flip_image(&resized[i]) } else { resized[i].clone() });
                let s = &scenes[i];
                targets.push(encode_boxes(&scene_boxes(s, flip), (s.height(), s.width()), config));
            }
            let refs: Vec<&Image> = batch_images.iter().collect();
            let x = batch::image_batch(&refs, dtype)?;
            let t = TargetTensors::new(&targets, dtype)?;
            let out = model.forward(&x)?;
            let (total, heat, size, offset) = detection_loss(&out, &t)?;
            let rec = DetLossRecord {
                step,
                epoch,
                total: scalar(&total)?,
                heat: scalar(&heat)?,
                size: scalar(&size)?,
                offset: scalar(&offset)?,
            };
            if !rec.total.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "detector loss became non-finite at step {step}"
                )));
            }
            opt.step(&total.backward()?)?;
            log.push(rec);
            step += 1;
        }
        on_epoch(epoch, &model)?;
    }
    Ok((model, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorCheckpoint {
    pub format_version: String,
    pub config: DetectorConfig,
    pub weights: ParamSnapshot,
}

impl DetectorCheckpoint {
    pub fn capture(model: &DetectorModel) -> Result<Self> {
        Ok(DetectorCheckpoint {
            format_version: DETECTOR_FORMAT_VERSION.into(),
            config: model.config().clone(),
            weights: model.params().snapshot()?,
        })
    }

    pub fn restore(&self, dtype: DType) -> Result<DetectorModel> {
        let model = DetectorModel::new(&self.config, dtype)?;
        model.params().restore(&self.weights)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: DetectorCheckpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != DETECTOR_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "detector checkpoint",
                found: ckpt.format_version,
                expected: DETECTOR_FORMAT_VERSION.into(),
            });
        }
        Ok(ckpt)
    }
}

/// One line of a detection dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub class_id: u16,
    pub bbox: [f64; 4],
    pub score: f64,
}

impl DetectionRecord {
    pub fn new(image_id: &str, d: &Detection) -> Self {
        DetectionRecord {
            image_id: image_id.to_string(),
            class_id: d.class_id,
            bbox: d.bbox.to_array(),
            score: d.score,
        }
    }

    pub fn detection(&self) -> Detection {
        let [a, b, c, d] = self.bbox;
        Detection::new(self.class_id, BBox::new(a, b, c, d), self.score)
    }
}

pub fn write_detections(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    jsonl::write_jsonl(path, records)
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    jsonl::read_jsonl(path)
}

/// Runs the detector over `images` in chunks, fanning the decode out.
pub fn detect_all(model: &DetectorModel, images: &[Image], chunk: usize) -> Result<Vec<Vec<Detection>>> {
    let mut out = Vec::with_capacity(images.len());
    for part in images.chunks(chunk.max(1)) {
        let refs: Vec<&Image> = part.iter().collect();
        out.extend(model.detect_batch(&refs)?);
    }
    Ok(out)
}
