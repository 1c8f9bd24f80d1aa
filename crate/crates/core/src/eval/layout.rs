use candle_core::Tensor;

use crate::advsup::Segmenter;
use crate::batch;
use crate::error::{Error, Result};
use crate::image::{Image, LabelGrid};
use crate::nn::to_f32_vec;
use crate::scenegen::LayoutScene;

/// Mean IoU between a predicted label map and the layout's semantic map,
/// over the classes present in the layout (background included).
pub fn layout_miou(layout: &LayoutScene, predicted: &LabelGrid) -> Result<f64> {
    let truth = &layout.semantic_map;
    if (truth.height, truth.width) != (predicted.height, predicted.width) {
        return Err(Error::shape(
            format!("{}x{}", truth.height, truth.width),
            format!("{}x{}", predicted.height, predicted.width),
        ));
    }
    let k = truth.max().max(predicted.max()) as usize + 1;
    let mut inter = vec![0usize; k];
    let mut union = vec![0usize; k];
    let mut present = vec![false; k];
    for (&t, &p) in truth.data.iter().zip(&predicted.data) {
        present[t as usize] = true;
        if t == p {
            inter[t as usize] += 1;
            union[t as usize] += 1;
        } else {
            union[t as usize] += 1;
            union[p as usize] += 1;
        }
    }
    let classes: Vec<usize> = (0..k).filter(|&c| present[c]).collect();
    let sum: f64 = classes.iter().map(|&c| inter[c] as f64 / union[c] as f64).sum();
    Ok(sum / classes.len() as f64)
}

/// Per-pixel argmax over the layout classes of a segmenter's output,
/// ignoring the fake channel.
pub fn segment(seg: &dyn Segmenter, images: &[&Image], dtype: candle_core::DType) -> Result<Vec<LabelGrid>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let x = batch::image_batch(images, dtype)?;
    let probs: Tensor = seg.probabilities(&x)?;
    let (b, _, h, w) = probs.dims4()?;
    let k = seg.num_layout_classes();
    let p = to_f32_vec(&probs.narrow(1, 0, k)?.contiguous()?)?;
    let hw = h * w;
    Ok((0..b)
        .map(|i| {
            let mut grid = LabelGrid::new(h, w);
            for px in 0..hw {
                let mut best = 0;
                for c in 1..k {
                    if p[(i * k + c) * hw + px] > p[(i * k + best) * hw + px] {
                        best = c;
                    }
                }
                grid.data[px] = best as u16;
            }
            grid
        })
        .collect())
}

/// Mean layout mIoU of `images` against their layouts, segmenting in
/// chunks.
pub fn mean_layout_miou(
    seg: &dyn Segmenter,
    images: &[Image],
    layouts: &[LayoutScene],
    dtype: candle_core::DType,
    chunk: usize,
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::EmptyInput("layout mIoU image set"));
    }
    if images.len() != layouts.len() {
        return Err(Error::PairingMismatch { scenes: layouts.len(), images: images.len() });
    }
    let mut sum = 0.0;
    for (ims, lays) in images.chunks(chunk.max(1)).zip(layouts.chunks(chunk.max(1))) {
        let refs: Vec<&Image> = ims.iter().collect();
        for (grid, lay) in segment(seg, &refs, dtype)?.iter().zip(lays) {
            sum += layout_miou(lay, grid)?;
        }
    }
    Ok(sum / images.len() as f64)
}
