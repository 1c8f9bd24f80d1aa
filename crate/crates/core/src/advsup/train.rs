use std::fs;
use std::io::Write as _;
use std::path::Path;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{discriminator_loss, generator_adv_loss_from_probs};
use super::segmenter::{Segmenter, SegmenterConfig, SegmenterDiscriminator};
use super::weights::class_weights;
use crate::batch;
use crate::diffusion::{
    build_schedule, diffusion_forward, drop_styles, gaussian, generator_step_rng, predict_x0,
    q_sample, DenoiserNet, DiffusionCheckpoint, DiffusionConfig, NoisePredictor, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{scalar, Adam, AdamConfig, AdamState, ParamSnapshot};
use crate::rng;
use crate::scenegen::LayoutScene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvConfig {
    pub lambda_adv: f64,
    pub disc_lr: f64,
    pub gen_lr: f64,
    pub disc_steps_per_gen_step: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Optional cap on total generator steps across all epochs.
    pub max_steps: Option<usize>,
    /// Style token attached to every training image.
    pub style_token: String,
    pub seed: u64,
}

impl Default for AdvConfig {
    fn default() -> Self {
        AdvConfig {
            lambda_adv: 0.1,
            disc_lr: 2e-4,
            gen_lr: 1e-3,
            disc_steps_per_gen_step: 1,
            epochs: 1,
            batch_size: 16,
            max_steps: None,
            style_token: "real".into(),
            seed: 0,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lambda_adv >= 0.0) {
            return bad("lambda_adv must be non-negative");
        }
        if !(self.disc_lr > 0.0 && self.gen_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.disc_steps_per_gen_step < 1 || self.batch_size < 1 {
            return bad("disc_steps_per_gen_step and batch_size must be at least 1");
        }
        Ok(())
    }
}

/// Loss values of one training step, as defined by the loss functions
/// (pixel sums, batch means).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub l_diff: f64,
    pub l_adv_gen: f64,
    pub l_dis: f64,
}

pub struct TrainState {
    pub generator: DenoiserNet,
    pub discriminator: SegmenterDiscriminator,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
    pub schedule: NoiseSchedule,
    pub step: usize,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(
        diffusion: &DiffusionConfig,
        segmenter: &SegmenterConfig,
        config: &AdvConfig,
        dtype: DType,
    ) -> Result<Self> {
        config.validate()?;
        if segmenter.num_classes != diffusion.num_classes {
            return Err(Error::InvalidConfig(format!(
                "segmenter has {} classes, diffusion model {}",
                segmenter.num_classes, diffusion.num_classes
            )));
        }
        let generator = DenoiserNet::new(diffusion, dtype)?;
        let discriminator = SegmenterDiscriminator::new(segmenter, dtype)?;
        let gen_opt = Adam::new(generator.params(), AdamConfig::with_lr(config.gen_lr))?;
        let disc_opt = Adam::new(discriminator.params(), AdamConfig::with_lr(config.disc_lr))?;
        Ok(TrainState {
            schedule: build_schedule(diffusion)?,
            generator,
            discriminator,
            gen_opt,
            disc_opt,
            step: 0,
            history: Vec::new(),
        })
    }
}

/// One batch of real-style images with their layouts.
pub struct TrainBatch {
    pub images: Tensor,
    pub layouts: Tensor,
    pub style: Vec<u32>,
}

impl TrainBatch {
    pub fn new(images: &[&Image], layouts: &[&LayoutScene], style: u32, dtype: DType) -> Result<Self> {
        if images.len() != layouts.len() {
            return Err(Error::PairingMismatch {
                scenes: layouts.len(),
                images: images.len(),
            });
        }
        Ok(TrainBatch {
            images: batch::image_batch(images, dtype)?,
            layouts: batch::layout_batch(layouts, dtype)?,
            style: vec![style; images.len()],
        })
    }
}

/// Optimization weight applied to the pixel-summed adversarial losses so
/// that they enter the objectives as per-pixel means.
fn pixel_mean_scale(labels: &Tensor) -> Result<f64> {
    let (_, _, h, w) = labels.dims4()?;
    Ok(1.0 / (h * w) as f64)
}

/// One-step `x̂0` estimates at uniformly drawn timesteps, detached from the
/// generator.
pub fn fake_estimates(
    images: &Tensor,
    layouts: &Tensor,
    style: &[u32],
    generator: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    rng: &mut rng::Rng,
) -> Result<Tensor> {
    use rand::Rng as _;
    let b = images.dim(0)?;
    let t: Vec<usize> = (0..b).map(|_| rng.random_range(0..schedule.len())).collect();
    let eps = Tensor::from_vec(gaussian(rng, images.elem_count()), images.dims(), images.device())?
        .to_dtype(images.dtype())?;
    let x_t = q_sample(images, &t, &eps, schedule)?;
    let eps_hat = generator.predict(&x_t, &t, layouts, style)?.detach();
    Ok(predict_x0(&x_t, &t, &eps_hat, schedule)?.detach())
}

/// The discriminator updates of one step, on detached fakes. Returns the
/// last `L_Dis`. Only discriminator parameters move.
pub fn discriminator_phase(batch: &TrainBatch, state: &mut TrainState, config: &AdvConfig) -> Result<f64> {
    let step = state.step;
    let scale = pixel_mean_scale(&batch.layouts)?;

    let mut disc_rng = rng::rng_from(rng::derive_indexed(config.seed, "disc-step", step as u64));
    let mut l_dis = f64::NAN;
    for _ in 0..config.disc_steps_per_gen_step {
        let fake = fake_estimates(
            &batch.images,
            &batch.layouts,
            &batch.style,
            &state.generator,
            &state.schedule,
            &mut disc_rng,
        )?;
        let loss = discriminator_loss(&batch.images, &fake, &batch.layouts, &state.discriminator)?;
        l_dis = scalar(&loss)?;
        if !l_dis.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                diff: f64::NAN,
                adv_gen: f64::NAN,
                dis: l_dis,
            });
        }
        let grads = (loss * scale)?.backward()?;
        state.disc_opt.step(&grads)?;
    }
    Ok(l_dis)
}

/// The generator update of one step on `L_diff + λ·L_adv_gen`. Returns
/// `(L_diff, L_adv_gen)`. Only generator parameters move; the
/// discriminator acts as a fixed critic.
pub fn generator_phase(batch: &TrainBatch, state: &mut TrainState, config: &AdvConfig) -> Result<(f64, f64)> {
    let step = state.step;
    let scale = pixel_mean_scale(&batch.layouts)?;
    let gcfg = state.generator.config().clone();
    let mut gen_rng = generator_step_rng(config.seed, step);
    let style = drop_styles(&batch.style, gcfg.null_style(), gcfg.style_drop_prob, &mut gen_rng);
    let fwd = diffusion_forward(
        &batch.images,
        &batch.layouts,
        &style,
        &state.generator,
        &state.schedule,
        &mut gen_rng,
    )?;
    let l_diff = scalar(&fwd.loss)?;
    let (objective, l_adv_gen) = if config.lambda_adv > 0.0 {
        let x0_hat = predict_x0(&fwd.x_t, &fwd.t, &fwd.eps_hat, &state.schedule)?;
        let probs = state.discriminator.probabilities(&x0_hat)?;
        let weights = class_weights(&batch.layouts)?;
        let adv = generator_adv_loss_from_probs(&probs, &batch.layouts, &weights)?;
        let value = scalar(&adv)?;
        ((&fwd.loss + (adv * (config.lambda_adv * scale))?)?, value)
    } else {
        (fwd.loss.clone(), 0.0)
    };
    if !l_diff.is_finite() || !l_adv_gen.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            diff: l_diff,
            adv_gen: l_adv_gen,
            dis: f64::NAN,
        });
    }
    let grads = objective.backward()?;
    state.gen_opt.step(&grads)?;
    Ok((l_diff, l_adv_gen))
}

/// Discriminator updates on detached fakes, then one generator update on
/// `L_diff + λ·L_adv_gen`. Generator randomness comes from
/// [`generator_step_rng`], discriminator randomness from a separate stream.
pub fn train_step(batch: &TrainBatch, state: &mut TrainState, config: &AdvConfig) -> Result<LossRecord> {
    let step = state.step;
    let l_dis = discriminator_phase(batch, state, config)?;
    let (l_diff, l_adv_gen) = generator_phase(batch, state, config).map_err(|e| match e {
        Error::NonFiniteLoss { step, diff, adv_gen, .. } => Error::NonFiniteLoss {
            step,
            diff,
            adv_gen,
            dis: l_dis,
        },
        e => e,
    })?;
    let record = LossRecord {
        step,
        l_diff,
        l_adv_gen,
        l_dis,
    };
    state.history.push(record);
    state.step += 1;
    Ok(record)
}

/// Real-style training pairs.
pub struct AdvDataset<'a> {
    pub images: &'a [Image],
    pub layouts: &'a [LayoutScene],
}

pub fn total_steps(n: usize, config: &AdvConfig) -> usize {
    let per_epoch = n.div_ceil(config.batch_size);
    let all = per_epoch * config.epochs;
    config.max_steps.map_or(all, |m| m.min(all))
}

/// Runs [`train_step`] over seeded shuffled batches until the configured
/// budget is spent. A resumed state continues from its step counter; the
/// batch order depends only on the step index, so resuming reproduces an
/// uninterrupted run.
pub fn train(
    data: &AdvDataset,
    config: &AdvConfig,
    state: &mut TrainState,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<()> {
    config.validate()?;
    let n = data.images.len();
    if n == 0 {
        return Err(Error::EmptyInput("adversarial training dataset"));
    }
    if data.layouts.len() != n {
        return Err(Error::PairingMismatch {
            scenes: data.layouts.len(),
            images: n,
        });
    }
    let style = state.generator.config().style_index(&config.style_token)?;
    let dtype = state.generator.params().dtype();
    let per_epoch = n.div_ceil(config.batch_size);
    let total = total_steps(n, config);
    let mut order: Vec<usize> = Vec::new();
    let mut order_epoch = usize::MAX;
    while state.step < total {
        let epoch = state.step / per_epoch;
        if epoch != order_epoch {
            order = (0..n).collect();
            order.shuffle(&mut rng::rng_from(rng::derive_indexed(config.seed, "shuffle", epoch as u64)));
            order_epoch = epoch;
        }
        let k = state.step % per_epoch;
        let idx = &order[k * config.batch_size..((k + 1) * config.batch_size).min(n)];
        let imgs: Vec<&Image> = idx.iter().map(|&i| &data.images[i]).collect();
        let lays: Vec<&LayoutScene> = idx.iter().map(|&i| &data.layouts[i]).collect();
        let batch = TrainBatch::new(&imgs, &lays, style, dtype)?;
        let rec = train_step(&batch, state, config)?;
        on_step(&rec);
    }
    Ok(())
}

pub const SEGMENTER_CHECKPOINT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterCheckpoint {
    pub format_version: String,
    pub config: SegmenterConfig,
    pub step: u64,
    pub weights: ParamSnapshot,
    #[serde(default)]
    pub optimizer: Option<AdamState>,
}

impl SegmenterCheckpoint {
    pub fn capture(seg: &SegmenterDiscriminator, step: u64, optimizer: Option<AdamState>) -> Result<Self> {
        Ok(SegmenterCheckpoint {
            format_version: SEGMENTER_CHECKPOINT_VERSION.into(),
            config: seg.config().clone(),
            step,
            weights: seg.params().snapshot()?,
            optimizer,
        })
    }

    pub fn restore(&self, dtype: DType) -> Result<SegmenterDiscriminator> {
        let seg = SegmenterDiscriminator::new(&self.config, dtype)?;
        seg.params().restore(&self.weights)?;
        Ok(seg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: SegmenterCheckpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != SEGMENTER_CHECKPOINT_VERSION {
            return Err(Error::FormatVersion {
                what: "segmenter checkpoint",
                found: ckpt.format_version,
                expected: SEGMENTER_CHECKPOINT_VERSION.into(),
            });
        }
        Ok(ckpt)
    }
}

pub const GENERATOR_FILE: &str = "generator.json";
pub const DISCRIMINATOR_FILE: &str = "discriminator.json";
pub const HISTORY_FILE: &str = "history.json";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";

/// Writes generator and discriminator checkpoints (with optimizer state)
/// and the full loss history into `dir`.
pub fn save_state(state: &TrainState, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let step = state.step as u64;
    DiffusionCheckpoint::capture(
        &state.generator,
        step,
        Some(state.gen_opt.state(state.generator.params())?),
    )?
    .save(&dir.join(GENERATOR_FILE))?;
    SegmenterCheckpoint::capture(
        &state.discriminator,
        step,
        Some(state.disc_opt.state(state.discriminator.params())?),
    )?
    .save(&dir.join(DISCRIMINATOR_FILE))?;
    let path = dir.join(HISTORY_FILE);
    fs::write(&path, serde_json::to_string(&state.history)?).map_err(|e| Error::io(&path, e))
}

/// Restores a state saved by [`save_state`].
pub fn load_state(dir: &Path, config: &AdvConfig, dtype: DType) -> Result<TrainState> {
    let gen = DiffusionCheckpoint::load(&dir.join(GENERATOR_FILE))?;
    let seg = SegmenterCheckpoint::load(&dir.join(DISCRIMINATOR_FILE))?;
    let mut state = TrainState::new(&gen.config, &seg.config, config, dtype)?;
    state.generator.params().restore(&gen.weights)?;
    state.discriminator.params().restore(&seg.weights)?;
    if let Some(opt) = &gen.optimizer {
        state.gen_opt.restore(opt)?;
    }
    if let Some(opt) = &seg.optimizer {
        state.disc_opt.restore(opt)?;
    }
    let path = dir.join(HISTORY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    state.history = serde_json::from_str(&text)?;
    state.step = gen.step as usize;
    if state.history.len() != state.step {
        return Err(Error::InvalidConfig(format!(
            "history length {} does not match step counter {}",
            state.history.len(),
            state.step
        )));
    }
    Ok(state)
}

/// Append-only CSV loss log with a header written on creation.
pub struct LossLog {
    file: fs::File,
}

impl LossLog {
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = !path.exists();
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if fresh {
            writeln!(file, "step,L_diff,L_adv_gen,L_Dis").map_err(|e| Error::io(path, e))?;
        }
        Ok(LossLog { file })
    }

    pub fn append(&mut self, r: &LossRecord) -> std::io::Result<()> {
        writeln!(self.file, "{},{},{},{}", r.step, r.l_diff, r.l_adv_gen, r.l_dis)
    }
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("malformed loss log line `{line}`")))
            };
            Ok(LossRecord {
                step: num(0)? as usize,
                l_diff: num(1)?,
                l_adv_gen: num(2)?,
                l_dis: num(3)?,
            })
        })
        .collect()
}

/// Supervised fit of a segmenter on real images: class-weighted
/// cross-entropy over the layout classes, per-pixel mean, Adam.
pub fn fit_segmenter(
    seg: &SegmenterDiscriminator,
    images: &[Image],
    layouts: &[LayoutScene],
    steps: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(Error::EmptyInput("segmenter training set"));
    }
    let dtype = seg.params().dtype();
    let mut opt = Adam::new(seg.params(), AdamConfig::with_lr(lr))?;
    let n = images.len();
    let per_epoch = n.div_ceil(batch_size);
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let epoch = step / per_epoch;
        if step % per_epoch == 0 {
            order = (0..n).collect();
            order.shuffle(&mut rng::rng_from(rng::derive_indexed(seed, "segmenter-shuffle", epoch as u64)));
        }
        let k = step % per_epoch;
        let idx = &order[k * batch_size..((k + 1) * batch_size).min(n)];
        let imgs: Vec<&Image> = idx.iter().map(|&i| &images[i]).collect();
        let lays: Vec<&LayoutScene> = idx.iter().map(|&i| &layouts[i]).collect();
        let x = batch::image_batch(&imgs, dtype)?;
        let labels = batch::layout_batch(&lays, dtype)?;
        let weights = class_weights(&labels)?;
        let probs = seg.probabilities(&x)?;
        let loss = generator_adv_loss_from_probs(&probs, &labels, &weights)?;
        let value = scalar(&loss)?;
        let grads = (loss * pixel_mean_scale(&labels)?)?.backward()?;
        opt.step(&grads)?;
        losses.push(value);
    }
    Ok(losses)
}
