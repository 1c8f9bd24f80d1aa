//! Minimal network toolkit on top of candle tensors: seeded parameter
//! registration, a handful of layers, a U-Net and Adam.

mod adam;
mod conv;
mod layers;
mod norm;
mod params;
mod unet;

pub use adam::{Adam, AdamConfig, AdamState};
pub use conv::conv2d_same;
pub use norm::group_norm;
pub use layers::{silu, Conv2d, Embedding, GroupNorm, Linear, ResBlock};
pub use params::{Builder, NamedTensor, ParamSnapshot, ParamStore};
pub use unet::{UNet, UNetConfig};

use candle_core::{DType, Device, Tensor};

use crate::error::Result;

/// Scalar value of a rank-0 or single-element tensor as `f64`.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.flatten_all()?
        .to_dtype(DType::F64)?
        .to_vec1::<f64>()?[0])
}

pub fn tensor_from(values: Vec<f32>, shape: &[usize], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

pub fn to_f32_vec(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?)
}
