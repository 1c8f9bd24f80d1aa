use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub timesteps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// `(H, W)`.
    pub image_size: (usize, usize),
    pub channels: usize,
    /// Semantic classes excluding background; the layout carries `N+1`
    /// one-hot channels.
    pub num_classes: usize,
    pub base_width: usize,
    /// Number of 2× downsampling stages in the U-Net.
    pub depth: usize,
    pub style_vocab: Vec<String>,
    /// Probability of replacing the style token with the null token during
    /// training (classifier-free guidance).
    pub style_drop_prob: f64,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            timesteps: 200,
            beta_min: 1e-4,
            beta_max: 0.02,
            image_size: (32, 32),
            channels: 3,
            num_classes: 3,
            base_width: 16,
            depth: 2,
            style_vocab: vec!["sim".into(), "real".into()],
            style_drop_prob: 0.1,
            seed: 0,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0 < self.beta_min && self.beta_min <= self.beta_max && self.beta_max < 1.0) {
            return bad(format!(
                "betas must satisfy 0 < beta_min <= beta_max < 1, got {} and {}",
                self.beta_min, self.beta_max
            ));
        }
        if self.timesteps < 2 {
            return bad(format!("timesteps must be at least 2, got {}", self.timesteps));
        }
        if self.style_vocab.is_empty() {
            return bad("style vocabulary is empty".into());
        }
        let m = 1 << self.depth;
        if !self.image_size.0.is_multiple_of(m) || !self.image_size.1.is_multiple_of(m) {
            return bad(format!(
                "image size {:?} not divisible by 2^depth = {m}",
                self.image_size
            ));
        }
        if !(0.0..=1.0).contains(&self.style_drop_prob) {
            return bad("style_drop_prob outside [0, 1]".into());
        }
        Ok(())
    }

    pub fn style_index(&self, token: &str) -> Result<u32> {
        self.style_vocab
            .iter()
            .position(|s| s == token)
            .map(|i| i as u32)
            .ok_or_else(|| Error::InvalidConfig(format!("style token `{token}` not in vocabulary")))
    }

    /// Index of the unconditional (dropped) style token.
    pub fn null_style(&self) -> u32 {
        self.style_vocab.len() as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// Variance of the ancestral step at `t > 0`:
    /// `beta_t · (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.betas[t] * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t])
        }
    }
}

/// Linear betas from `beta_min` to `beta_max`, with `ᾱ` as a running product.
pub fn build_schedule(config: &DiffusionConfig) -> Result<NoiseSchedule> {
    config.validate()?;
    let t = config.timesteps;
    let betas: Vec<f64> = (0..t)
        .map(|i| config.beta_min + (config.beta_max - config.beta_min) * i as f64 / (t - 1) as f64)
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bar,
    })
}
