use candle_core::{DType, Tensor};

use super::boxes::Detection;
use super::config::DetectorConfig;
use super::targets::{decode, DetTargets, HeadMaps};
use crate::batch;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{silu, to_f32_vec, Builder, Conv2d, GroupNorm, ParamStore, ResBlock};
use crate::rng;

/// Prior probability of an object at a cell; sets the heat bias so that an
/// untrained head starts near it rather than at 0.5.
const HEAT_PRIOR: f64 = 0.1;

/// Raw head outputs for a batch: heat logits `(B, N, h, w)`, size and
/// offset `(B, 2, h, w)`.
#[derive(Debug, Clone)]
pub struct HeadTensors {
    pub heat_logits: Tensor,
    pub size: Tensor,
    pub offset: Tensor,
}

/// Center-heatmap detector: a pooled convolutional trunk, a coarser
/// context branch added back in, and three 1×1 heads.
#[derive(Debug, Clone)]
pub struct DetectorModel {
    config: DetectorConfig,
    params: ParamStore,
    stem: Conv2d,
    stages: Vec<ResBlock>,
    neck: ResBlock,
    context: ResBlock,
    head_norm: GroupNorm,
    head_hidden: Conv2d,
    heat: Conv2d,
    size: Conv2d,
    offset: Conv2d,
}

impl DetectorModel {
    pub fn new(config: &DetectorConfig, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new(dtype);
        let mut r = rng::stream(config.seed, "detector-init");
        let mut b = Builder::new(&mut params, &mut r);
        let w = config.base_width;
        let stem = Conv2d::new(&mut b.sub("stem"), 3, w, 3)?;
        let mut stages = Vec::new();
        let mut prev = w;
        for p in 0..config.pools() {
            let next = if p == 0 { w } else { 2 * w };
            stages.push(ResBlock::new(&mut b.sub(&format!("stage{p}")), prev, next, None)?);
            prev = next;
        }
        let feat = 2 * w;
        let neck = ResBlock::new(&mut b.sub("neck"), prev, feat, None)?;
        let context = ResBlock::new(&mut b.sub("context"), feat, feat, None)?;
        let head_norm = GroupNorm::new(&mut b.sub("head_norm"), feat)?;
        let head_hidden = Conv2d::new(&mut b.sub("head_hidden"), feat, w, 3)?;
        let heat_bias = -((1.0 - HEAT_PRIOR) / HEAT_PRIOR).ln();
        let heat = Conv2d::with_bias(&mut b.sub("heat"), w, config.num_classes, 1, heat_bias)?;
        let size = Conv2d::new(&mut b.sub("size"), w, 2, 1)?;
        let offset = Conv2d::new(&mut b.sub("offset"), w, 2, 1)?;
        Ok(DetectorModel {
            config: config.clone(),
            params,
            stem,
            stages,
            neck,
            context,
            head_norm,
            head_hidden,
            heat,
            size,
            offset,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `images`: `(B, 3, H, W)` at the configured input size.
    pub fn forward(&self, images: &Tensor) -> Result<HeadTensors> {
        let (_, c, h, w) = images.dims4()?;
        if c != 3 || (h, w) != self.config.input_size {
            return Err(Error::shape(
                format!("3x{}x{}", self.config.input_size.0, self.config.input_size.1),
                format!("{c}x{h}x{w}"),
            ));
        }
        let mut x = self.stem.forward(images)?;
        for stage in &self.stages {
            x = stage.forward(&x, None)?.avg_pool2d(2)?;
        }
        let x = self.neck.forward(&x, None)?;
        let (_, _, fh, fw) = x.dims4()?;
        let x = if fh % 2 == 0 && fw % 2 == 0 {
            let ctx = self.context.forward(&x.avg_pool2d(2)?, None)?;
            (&x + ctx.upsample_nearest2d(fh, fw)?)?
        } else {
            self.context.forward(&x, None)?
        };
        let hidden = silu(&self.head_hidden.forward(&silu(&self.head_norm.forward(&x)?)?)?)?;
        Ok(HeadTensors {
            heat_logits: self.heat.forward(&hidden)?,
            size: self.size.forward(&hidden)?,
            offset: self.offset.forward(&hidden)?,
        })
    }

    /// Head maps for each image, with heat passed through the sigmoid.
    pub fn head_maps(&self, images: &[&Image]) -> Result<Vec<HeadMaps>> {
        let (ih, iw) = self.config.input_size;
        let resized: Vec<Image> = images
            .iter()
            .map(|im| if (im.height, im.width) == (ih, iw) { (*im).clone() } else { im.resize(ih, iw) })
            .collect();
        let refs: Vec<&Image> = resized.iter().collect();
        let x = batch::image_batch(&refs, self.params.dtype())?;
        let out = self.forward(&x)?;
        let heat = to_f32_vec(&candle_nn::ops::sigmoid(&out.heat_logits)?)?;
        let size = to_f32_vec(&out.size)?;
        let offset = to_f32_vec(&out.offset)?;
        let (oh, ow) = self.config.output_size();
        let n = self.config.num_classes;
        let hw = oh * ow;
        Ok((0..images.len())
            .map(|i| HeadMaps {
                num_classes: n,
                height: oh,
                width: ow,
                heat: heat[i * n * hw..(i + 1) * n * hw].to_vec(),
                size: size[i * 2 * hw..(i + 1) * 2 * hw].to_vec(),
                offset: offset[i * 2 * hw..(i + 1) * 2 * hw].to_vec(),
            })
            .collect())
    }

    pub fn detect(&self, image: &Image) -> Result<Vec<Detection>> {
        Ok(self.detect_batch(&[image])?.pop().unwrap_or_default())
    }

    /// Detections per image, in each image's own pixel coordinates.
    pub fn detect_batch(&self, images: &[&Image]) -> Result<Vec<Vec<Detection>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let maps = self.head_maps(images)?;
        Ok(maps
            .iter()
            .zip(images)
            .map(|(m, im)| decode(m, &self.config, (im.height, im.width)))
            .collect())
    }
}

/// Stacked targets for a batch, as tensors.
pub struct TargetTensors {
    heat: Tensor,
    positive: Tensor,
    size: Tensor,
    offset: Tensor,
    mask: Tensor,
    num_positive: usize,
    num_objects: usize,
}

impl TargetTensors {
    pub fn new(targets: &[DetTargets], dtype: DType) -> Result<Self> {
        let first = targets.first().ok_or(Error::EmptyInput("detector target batch"))?;
        let (n, h, w) = (first.maps.num_classes, first.maps.height, first.maps.width);
        let b = targets.len();
        let cat = |f: &dyn Fn(&DetTargets) -> &[f32]| -> Vec<f32> {
            targets.iter().flat_map(|t| f(t).iter().copied()).collect()
        };
        let heat = cat(&|t| &t.maps.heat);
        let positive: Vec<f32> = heat.iter().map(|&v| if v == 1.0 { 1.0 } else { 0.0 }).collect();
        let num_positive = positive.iter().filter(|&&v| v > 0.0).count();
        let mk = |v: Vec<f32>, shape: &[usize]| crate::nn::tensor_from(v, shape, dtype);
        Ok(TargetTensors {
            heat: mk(heat, &[b, n, h, w])?,
            positive: mk(positive, &[b, n, h, w])?,
            size: mk(cat(&|t| &t.maps.size), &[b, 2, h, w])?,
            offset: mk(cat(&|t| &t.maps.offset), &[b, 2, h, w])?,
            mask: mk(cat(&|t| &t.mask), &[b, 1, h, w])?,
            num_positive,
            num_objects: targets.iter().map(|t| t.num_objects).sum(),
        })
    }
}

/// Weight of the size term relative to heat and offset.
pub const SIZE_LOSS_WEIGHT: f64 = 0.1;

/// `log(1 + e^x)` without overflow.
fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = ((x.abs()?.neg()?.exp()? + 1.0)?).log()?;
    Ok((x.relu()? + tail)?)
}

/// Focal heat loss, and L1 size and offset losses at object centers.
/// Returns `(total, heat, size, offset)`.
pub fn detection_loss(out: &HeadTensors, t: &TargetTensors) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let logits = &out.heat_logits;
    let p = candle_nn::ops::sigmoid(logits)?;
    let neg_log_p = softplus(&logits.neg()?)?;
    let neg_log_q = softplus(logits)?;
    let one_minus_p = p.affine(-1.0, 1.0)?;
    let pos = (&t.positive * one_minus_p.sqr()? * neg_log_p)?.sum_all()?;
    let neg_weight = t.heat.affine(-1.0, 1.0)?.sqr()?.sqr()?;
    let neg = (t.positive.affine(-1.0, 1.0)? * neg_weight * p.sqr()? * neg_log_q)?.sum_all()?;
    let heat = ((pos + neg)? / t.num_positive.max(1) as f64)?;
    let norm = t.num_objects.max(1) as f64;
    let size = (out.size.broadcast_sub(&t.size)?.abs()?.broadcast_mul(&t.mask)?.sum_all()? / norm)?;
    let offset = (out.offset.broadcast_sub(&t.offset)?.abs()?.broadcast_mul(&t.mask)?.sum_all()? / norm)?;
    let total = ((&heat + (&size * SIZE_LOSS_WEIGHT)?)? + &offset)?;
    Ok((total, heat, size, offset))
}
