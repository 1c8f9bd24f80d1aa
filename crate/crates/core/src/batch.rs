//! Conversions between scene/image values and batched tensors.

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scenegen::LayoutScene;

/// Stacks images into a `(B, C, H, W)` tensor.
pub fn image_batch(images: &[&Image], dtype: DType) -> Result<Tensor> {
    let first = images.first().ok_or(Error::EmptyInput("image batch"))?;
    let (c, h, w) = first.shape();
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if img.shape() != (c, h, w) {
            return Err(Error::shape(format!("{c}x{h}x{w}"), format!("{:?}", img.shape())));
        }
        data.extend_from_slice(&img.data);
    }
    Ok(Tensor::from_vec(data, (images.len(), c, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// One-hot layouts over `{background, 1..N}` as `(B, N+1, H, W)`.
pub fn layout_batch(scenes: &[&LayoutScene], dtype: DType) -> Result<Tensor> {
    let first = scenes.first().ok_or(Error::EmptyInput("layout batch"))?;
    let k = first.num_classes as usize + 1;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(scenes.len() * k * h * w);
    for s in scenes {
        if s.num_classes != first.num_classes || s.height() != h || s.width() != w {
            return Err(Error::shape(
                format!("N={} {h}x{w}", first.num_classes),
                format!("N={} {}x{}", s.num_classes, s.height(), s.width()),
            ));
        }
        data.extend(s.one_hot());
    }
    Ok(Tensor::from_vec(data, (scenes.len(), k, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Splits a `(B, C, H, W)` tensor into images.
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<Image>> {
    let (b, c, h, w) = t.dims4()?;
    let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let n = c * h * w;
    (0..b)
        .map(|i| Image::from_vec(c, h, w, flat[i * n..(i + 1) * n].to_vec()))
        .collect()
}
