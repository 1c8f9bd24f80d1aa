use candle_core::{DType, Device, Tensor};

use super::schedule::DiffusionConfig;
use crate::error::{Error, Result};
use crate::nn::{silu, Builder, Embedding, Linear, ParamStore, UNet, UNetConfig};
use crate::rng;

/// Anything that predicts the noise in `x_t`.
pub trait NoisePredictor {
    /// `x_t`: `(B, C, H, W)`; `t`: one timestep per batch element;
    /// `layout`: `(B, N+1, H, W)` one-hot; `style`: one token index per
    /// element. Returns `ε̂` with the shape of `x_t`.
    fn predict(&self, x_t: &Tensor, t: &[usize], layout: &Tensor, style: &[u32]) -> Result<Tensor>;
}

/// Layout- and style-conditioned U-Net noise predictor. The layout enters
/// by channel concatenation; timestep and style enter as a shared
/// per-channel conditioning vector.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    config: DiffusionConfig,
    params: ParamStore,
    unet: UNet,
    time_in: Linear,
    time_out: Linear,
    style: Embedding,
    time_dim: usize,
}

impl DenoiserNet {
    pub fn new(config: &DiffusionConfig, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new(dtype);
        let mut rng = rng::stream(config.seed, "denoiser-init");
        let mut b = Builder::new(&mut params, &mut rng);
        let cond_dim = 4 * config.base_width;
        let time_dim = 2 * config.base_width;
        let time_in = Linear::new(&mut b.sub("time_in"), time_dim, cond_dim)?;
        let time_out = Linear::new(&mut b.sub("time_out"), cond_dim, cond_dim)?;
        let style = Embedding::new(&mut b.sub("style"), config.style_vocab.len() + 1, cond_dim)?;
        let unet = UNet::new(
            &mut b.sub("unet"),
            UNetConfig {
                in_channels: config.channels + config.num_classes + 1,
                out_channels: config.channels,
                base_width: config.base_width,
                depth: config.depth,
                cond_dim: Some(cond_dim),
            },
            true,
        )?;
        Ok(DenoiserNet {
            config: config.clone(),
            params,
            unet,
            time_in,
            time_out,
            style,
            time_dim,
        })
    }

    pub fn config(&self) -> &DiffusionConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn time_embedding(&self, t: &[usize], dtype: DType) -> Result<Tensor> {
        let half = self.time_dim / 2;
        let mut data = Vec::with_capacity(t.len() * self.time_dim);
        for &ti in t {
            let (mut s, mut c) = (Vec::with_capacity(half), Vec::with_capacity(half));
            for i in 0..half {
                let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
                s.push((ti as f64 * freq).sin());
                c.push((ti as f64 * freq).cos());
            }
            data.extend(s);
            data.extend(c);
        }
        Ok(Tensor::from_vec(data, (t.len(), self.time_dim), &Device::Cpu)?.to_dtype(dtype)?)
    }
}

impl NoisePredictor for DenoiserNet {
    fn predict(&self, x_t: &Tensor, t: &[usize], layout: &Tensor, style: &[u32]) -> Result<Tensor> {
        let (bsz, c, h, w) = x_t.dims4()?;
        let (lb, k, lh, lw) = layout.dims4()?;
        if c != self.config.channels
            || (lb, lh, lw) != (bsz, h, w)
            || k != self.config.num_classes + 1
            || t.len() != bsz
            || style.len() != bsz
        {
            return Err(Error::shape(
                format!(
                    "x_t (B,{},H,W), layout (B,{},H,W), B timesteps and styles",
                    self.config.channels,
                    self.config.num_classes + 1
                ),
                format!("x_t {:?}, layout {:?}, {} t, {} styles", x_t.dims(), layout.dims(), t.len(), style.len()),
            ));
        }
        if let Some(&bad) = t.iter().find(|&&ti| ti >= self.config.timesteps) {
            return Err(Error::InvalidConfig(format!("timestep {bad} out of range")));
        }
        let dtype = x_t.dtype();
        let temb = self.time_embedding(t, dtype)?;
        let temb = self.time_out.forward(&silu(&self.time_in.forward(&temb)?)?)?;
        let ids = Tensor::from_vec(style.to_vec(), bsz, &Device::Cpu)?;
        let cond = (temb + self.style.forward(&ids)?)?;
        let input = Tensor::cat(&[x_t, &layout.to_dtype(dtype)?], 1)?;
        self.unet.forward(&input, Some(&cond))
    }
}
