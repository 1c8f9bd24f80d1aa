use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Builder, ParamStore, UNet, UNetConfig};
use crate::rng;

/// Per-pixel classifier over `K` layout classes plus one trailing "fake"
/// class. Outputs are probabilities on the simplex.
pub trait Segmenter {
    /// `(B, C, H, W)` → `(B, K+1, H, W)` probabilities.
    fn probabilities(&self, images: &Tensor) -> Result<Tensor>;

    /// Number of layout classes `K` (background included), excluding fake.
    fn num_layout_classes(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub channels: usize,
    /// Semantic classes excluding background.
    pub num_classes: usize,
    pub base_width: usize,
    pub depth: usize,
    pub seed: u64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            channels: 3,
            num_classes: 3,
            base_width: 12,
            depth: 2,
            seed: 0,
        }
    }
}

impl SegmenterConfig {
    pub fn layout_classes(&self) -> usize {
        self.num_classes + 1
    }
}

/// U-Net segmenter with a softmax head over background, the `N` semantic
/// classes and the fake class.
#[derive(Debug, Clone)]
pub struct SegmenterDiscriminator {
    config: SegmenterConfig,
    params: ParamStore,
    unet: UNet,
}

impl SegmenterDiscriminator {
    pub fn new(config: &SegmenterConfig, dtype: DType) -> Result<Self> {
        let mut params = ParamStore::new(dtype);
        let mut rng = rng::stream(config.seed, "segmenter-init");
        let mut b = Builder::new(&mut params, &mut rng);
        let unet = UNet::new(
            &mut b.sub("unet"),
            UNetConfig {
                in_channels: config.channels,
                out_channels: config.layout_classes() + 1,
                base_width: config.base_width,
                depth: config.depth,
                cond_dim: None,
            },
            false,
        )?;
        Ok(SegmenterDiscriminator {
            config: config.clone(),
            params,
            unet,
        })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let c = images.dim(1)?;
        if c != self.config.channels {
            return Err(Error::shape(format!("{} channels", self.config.channels), c));
        }
        self.unet.forward(images, None)
    }
}

impl Segmenter for SegmenterDiscriminator {
    fn probabilities(&self, images: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::softmax(&self.logits(images)?, 1)?)
    }

    fn num_layout_classes(&self) -> usize {
        self.config.layout_classes()
    }
}
