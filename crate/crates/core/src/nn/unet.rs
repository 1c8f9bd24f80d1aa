use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::layers::{silu, Conv2d, GroupNorm, ResBlock};
use super::params::Builder;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    /// Number of 2× downsampling stages.
    pub depth: usize,
    pub cond_dim: Option<usize>,
}

impl UNetConfig {
    fn width(&self, level: usize) -> usize {
        if level == 0 {
            self.base_width
        } else {
            2 * self.base_width
        }
    }
}

/// Encoder–decoder with skip connections; spatial size in equals out.
#[derive(Debug, Clone)]
pub struct UNet {
    config: UNetConfig,
    stem: Conv2d,
    downs: Vec<ResBlock>,
    mid: ResBlock,
    ups: Vec<ResBlock>,
    out_norm: GroupNorm,
    out_conv: Conv2d,
}

impl UNet {
    pub fn new(b: &mut Builder, config: UNetConfig, zero_out: bool) -> Result<Self> {
        if config.depth == 0 {
            return Err(Error::InvalidConfig("U-Net depth must be at least 1".into()));
        }
        let cond = config.cond_dim;
        let stem = Conv2d::new(&mut b.sub("stem"), config.in_channels, config.base_width, 3)?;
        let mut downs = Vec::new();
        let mut prev = config.base_width;
        for l in 0..config.depth {
            let w = config.width(l);
            downs.push(ResBlock::new(&mut b.sub(&format!("down{l}")), prev, w, cond)?);
            prev = w;
        }
        let mid = ResBlock::new(&mut b.sub("mid"), prev, prev, cond)?;
        let mut ups = Vec::new();
        for l in (0..config.depth).rev() {
            let w = config.width(l);
            ups.push(ResBlock::new(&mut b.sub(&format!("up{l}")), prev + w, w, cond)?);
            prev = w;
        }
        let out_norm = GroupNorm::new(&mut b.sub("out_norm"), prev)?;
        let out_conv = if zero_out {
            Conv2d::zeros(&mut b.sub("out_conv"), prev, config.out_channels, 3)?
        } else {
            Conv2d::new(&mut b.sub("out_conv"), prev, config.out_channels, 3)?
        };
        Ok(UNet {
            config,
            stem,
            downs,
            mid,
            ups,
            out_norm,
            out_conv,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// `x`: `(B, in, H, W)` with `H`, `W` divisible by `2^depth`.
    pub fn forward(&self, x: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let m = 1 << self.config.depth;
        if c != self.config.in_channels || h % m != 0 || w % m != 0 {
            return Err(Error::shape(
                format!("{} channels, H and W divisible by {m}", self.config.in_channels),
                format!("{c}x{h}x{w}"),
            ));
        }
        let mut hcur = self.stem.forward(x)?;
        let mut skips = Vec::with_capacity(self.downs.len());
        for down in &self.downs {
            hcur = down.forward(&hcur, cond)?;
            skips.push(hcur.clone());
            hcur = hcur.avg_pool2d(2)?;
        }
        hcur = self.mid.forward(&hcur, cond)?;
        for up in &self.ups {
            let skip = skips.pop().expect("one skip per level");
            let (_, _, sh, sw) = skip.dims4()?;
            hcur = hcur.upsample_nearest2d(sh, sw)?;
            hcur = Tensor::cat(&[&hcur, &skip], 1)?;
            hcur = up.forward(&hcur, cond)?;
        }
        self.out_conv.forward(&silu(&self.out_norm.forward(&hcur)?)?)
    }
}
