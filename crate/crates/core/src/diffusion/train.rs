use candle_core::{DType, Tensor};
use rand::Rng as _;

use super::denoiser::DenoiserNet;
use super::process::diffusion_forward;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::{scalar, Adam};
use crate::rng::{self, Rng};

/// Per-step generator stream; shared with the adversarial trainer so both
/// draw identical timesteps, noise and style drops.
pub fn generator_step_rng(seed: u64, step: usize) -> Rng {
    rng::rng_from(rng::derive_indexed(seed, "gen-step", step as u64))
}

/// Replaces each style token with `null_style` with probability `drop_prob`.
pub fn drop_styles(style: &[u32], null_style: u32, drop_prob: f64, rng: &mut Rng) -> Vec<u32> {
    style
        .iter()
        .map(|&s| if rng.random::<f64>() < drop_prob { null_style } else { s })
        .collect()
}

/// Plain ε-prediction trainer with no discriminator attached.
pub struct DiffusionTrainer {
    pub net: DenoiserNet,
    pub optimizer: Adam,
    pub schedule: NoiseSchedule,
    pub seed: u64,
    pub step: usize,
}

impl DiffusionTrainer {
    /// One Adam step on the ε-prediction loss; returns the loss value.
    pub fn step(&mut self, images: &Tensor, layouts: &Tensor, style: &[u32]) -> Result<f64> {
        let cfg = self.net.config();
        let mut rng = generator_step_rng(self.seed, self.step);
        let style = drop_styles(style, cfg.null_style(), cfg.style_drop_prob, &mut rng);
        let fwd = diffusion_forward(images, layouts, &style, &self.net, &self.schedule, &mut rng)?;
        let loss = scalar(&fwd.loss)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                diff: loss,
                adv_gen: 0.0,
                dis: 0.0,
            });
        }
        let grads = fwd.loss.backward()?;
        self.optimizer.step(&grads)?;
        self.step += 1;
        Ok(loss)
    }

    pub fn dtype(&self) -> DType {
        self.net.params().dtype()
    }
}
