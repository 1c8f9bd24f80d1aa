//! Layout-conditioned denoising diffusion: linear noise schedule, forward
//! noising, ancestral sampling and the ε-prediction objective.

mod checkpoint;
mod denoiser;
mod process;
mod schedule;
mod train;

pub use checkpoint::{DiffusionCheckpoint, CHECKPOINT_FORMAT_VERSION};
pub use denoiser::{DenoiserNet, NoisePredictor};
pub use process::{
    denoise_step, diffusion_forward, diffusion_forward_with, diffusion_loss, gaussian,
    predict_x0, predict_x0_unclamped, q_sample, sample, sample_batch, DiffusionForward,
    SampleRequest, SampleSpace, StepConditioning,
};
pub use schedule::{build_schedule, DiffusionConfig, NoiseSchedule};
pub use train::{drop_styles, generator_step_rng, DiffusionTrainer};

use candle_core::DType;

use crate::error::Result;
use crate::image::Image;

/// A denoiser bundled with its schedule, ready to sample.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub net: DenoiserNet,
    pub schedule: NoiseSchedule,
}

impl DiffusionModel {
    pub fn new(config: &DiffusionConfig, dtype: DType) -> Result<Self> {
        Ok(DiffusionModel {
            net: DenoiserNet::new(config, dtype)?,
            schedule: build_schedule(config)?,
        })
    }

    pub fn space(&self) -> SampleSpace<'_> {
        SampleSpace {
            channels: self.net.config().channels,
            style_vocab: &self.net.config().style_vocab,
            dtype: self.net.params().dtype(),
        }
    }

    pub fn sample(&self, request: &SampleRequest) -> Result<Image> {
        sample(request, &self.net, &self.schedule, &self.space())
    }

    pub fn sample_batch(&self, requests: &[SampleRequest]) -> Result<Vec<Image>> {
        sample_batch(requests, &self.net, &self.schedule, &self.space())
    }
}
