use candle_core::{DType, Device, Tensor};
use rand_distr::{Distribution, StandardNormal};

use super::denoiser::NoisePredictor;
use super::schedule::NoiseSchedule;
use crate::batch;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{self, Rng};
use crate::scenegen::LayoutScene;

/// Per-element coefficient broadcastable against `(B, C, H, W)`.
fn coefficient(values: Vec<f64>, dtype: DType) -> Result<Tensor> {
    let b = values.len();
    Ok(Tensor::from_vec(values, (b, 1, 1, 1), &Device::Cpu)?.to_dtype(dtype)?)
}

fn check_timesteps(t: &[usize], batch: usize, schedule: &NoiseSchedule) -> Result<()> {
    if t.len() != batch {
        return Err(Error::shape(format!("{batch} timesteps"), t.len()));
    }
    match t.iter().find(|&&ti| ti >= schedule.len()) {
        Some(bad) => Err(Error::InvalidConfig(format!(
            "timestep {bad} outside [0, {})",
            schedule.len()
        ))),
        None => Ok(()),
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("{:?}", a.dims()), format!("{:?}", b.dims())));
    }
    Ok(())
}

pub fn gaussian(rng: &mut Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `sqrt(ᾱ_t)·x0 + sqrt(1 − ᾱ_t)·ε`, per batch element.
pub fn q_sample(x0: &Tensor, t: &[usize], eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    same_shape(x0, eps)?;
    check_timesteps(t, x0.dim(0)?, schedule)?;
    let a = coefficient(t.iter().map(|&i| schedule.alpha_bar[i].sqrt()).collect(), x0.dtype())?;
    let s = coefficient(
        t.iter().map(|&i| (1.0 - schedule.alpha_bar[i]).sqrt()).collect(),
        x0.dtype(),
    )?;
    Ok((x0.broadcast_mul(&a)? + eps.broadcast_mul(&s)?)?)
}

/// `(x_t − sqrt(1 − ᾱ_t)·ε̂) / sqrt(ᾱ_t)` without clamping.
pub fn predict_x0_unclamped(
    x_t: &Tensor,
    t: &[usize],
    eps_hat: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    same_shape(x_t, eps_hat)?;
    check_timesteps(t, x_t.dim(0)?, schedule)?;
    let s = coefficient(
        t.iter().map(|&i| (1.0 - schedule.alpha_bar[i]).sqrt()).collect(),
        x_t.dtype(),
    )?;
    let inv = coefficient(
        t.iter().map(|&i| 1.0 / schedule.alpha_bar[i].sqrt()).collect(),
        x_t.dtype(),
    )?;
    Ok((x_t - eps_hat.broadcast_mul(&s)?)?.broadcast_mul(&inv)?)
}

/// One-step estimate of the clean image, clamped to `[-1, 1]`.
pub fn predict_x0(x_t: &Tensor, t: &[usize], eps_hat: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    Ok(predict_x0_unclamped(x_t, t, eps_hat, schedule)?.clamp(-1.0, 1.0)?)
}

/// Conditioning shared by every element of a reverse-process batch.
pub struct StepConditioning<'a> {
    pub layout: &'a Tensor,
    pub style: &'a [u32],
    pub null_style: u32,
    pub guidance_weight: f64,
}

fn guided_eps(
    x_t: &Tensor,
    t: usize,
    cond: &StepConditioning,
    net: &dyn NoisePredictor,
) -> Result<Tensor> {
    let b = x_t.dim(0)?;
    let ts = vec![t; b];
    let eps = net.predict(x_t, &ts, cond.layout, cond.style)?;
    if cond.guidance_weight == 0.0 {
        return Ok(eps);
    }
    let null = vec![cond.null_style; b];
    let eps_u = net.predict(x_t, &ts, cond.layout, &null)?;
    Ok((&eps + ((&eps - eps_u)? * cond.guidance_weight)?)?)
}

/// Ancestral step `x_t → x_{t−1}` through the clamped `x̂0` estimate, so a
/// poor ε̂ cannot push the chain outside the image range. At `t = 0` the
/// posterior mean is returned with no added noise. Each batch element
/// draws its noise from its own rng.
pub fn denoise_step(
    x_t: &Tensor,
    t: usize,
    cond: &StepConditioning,
    net: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    rngs: &mut [Rng],
) -> Result<Tensor> {
    let (b, c, h, w) = x_t.dims4()?;
    check_timesteps(&vec![t; b], b, schedule)?;
    if rngs.len() != b {
        return Err(Error::shape(format!("{b} rngs"), rngs.len()));
    }
    let eps = guided_eps(x_t, t, cond, net)?;
    let x0 = predict_x0(x_t, &vec![t; b], &eps, schedule)?;
    // Posterior mean of q(x_{t-1} | x_t, x0) around the clamped estimate.
    let ab = schedule.alpha_bar[t];
    let ab_prev = if t == 0 { 1.0 } else { schedule.alpha_bar[t - 1] };
    let coef_x0 = ab_prev.sqrt() * schedule.betas[t] / (1.0 - ab);
    let coef_xt = schedule.alphas[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let mean = ((x0 * coef_x0)? + (x_t * coef_xt)?)?;
    if t == 0 {
        return Ok(mean);
    }
    let sigma = schedule.posterior_variance(t).sqrt();
    let n = c * h * w;
    let mut z = Vec::with_capacity(b * n);
    for r in rngs.iter_mut() {
        z.extend(gaussian(r, n));
    }
    let z = Tensor::from_vec(z, (b, c, h, w), &Device::Cpu)?.to_dtype(x_t.dtype())?;
    Ok((mean + (z * sigma)?)?)
}

#[derive(Debug, Clone)]
pub struct SampleRequest<'a> {
    pub layout: &'a LayoutScene,
    pub style: String,
    pub seed: u64,
    pub guidance_weight: f64,
}

/// Everything the reverse loop needs to know about the network's domain.
pub struct SampleSpace<'a> {
    pub channels: usize,
    pub style_vocab: &'a [String],
    pub dtype: DType,
}

/// Runs the full reverse loop for a batch of requests. Requests must share
/// a guidance weight; each request's noise comes from its own seed, so a
/// request's output does not depend on the other batch members' seeds.
pub fn sample_batch(
    requests: &[SampleRequest],
    net: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    space: &SampleSpace,
) -> Result<Vec<Image>> {
    let first = requests.first().ok_or(Error::EmptyInput("sample requests"))?;
    if requests.iter().any(|r| r.guidance_weight != first.guidance_weight) {
        return Err(Error::InvalidConfig("mixed guidance weights in one batch".into()));
    }
    if first.guidance_weight < 0.0 {
        return Err(Error::InvalidConfig("guidance_weight must be non-negative".into()));
    }
    let style = requests
        .iter()
        .map(|r| {
            space
                .style_vocab
                .iter()
                .position(|s| *s == r.style)
                .map(|i| i as u32)
                .ok_or_else(|| Error::InvalidConfig(format!("style token `{}` not in vocabulary", r.style)))
        })
        .collect::<Result<Vec<_>>>()?;
    let layouts: Vec<&LayoutScene> = requests.iter().map(|r| r.layout).collect();
    let layout = batch::layout_batch(&layouts, space.dtype)?;
    let (b, _, h, w) = layout.dims4()?;
    let c = space.channels;
    let mut rngs: Vec<Rng> = requests.iter().map(|r| rng::stream(r.seed, "sample")).collect();
    let mut init = Vec::with_capacity(b * c * h * w);
    for r in rngs.iter_mut() {
        init.extend(gaussian(r, c * h * w));
    }
    let mut x = Tensor::from_vec(init, (b, c, h, w), &Device::Cpu)?.to_dtype(space.dtype)?;
    let cond = StepConditioning {
        layout: &layout,
        style: &style,
        null_style: space.style_vocab.len() as u32,
        guidance_weight: first.guidance_weight,
    };
    for t in (0..schedule.len()).rev() {
        // Parameters are tracked variables; without the detach every step
        // would keep the whole chain of earlier steps alive.
        x = denoise_step(&x, t, &cond, net, schedule, &mut rngs)?.detach();
    }
    batch::tensor_to_images(&x.clamp(-1.0, 1.0)?)
}

pub fn sample(
    request: &SampleRequest,
    net: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    space: &SampleSpace,
) -> Result<Image> {
    Ok(sample_batch(std::slice::from_ref(request), net, schedule, space)?
        .pop()
        .expect("one request yields one image"))
}

/// Intermediate values of one ε-prediction training evaluation.
#[derive(Debug, Clone)]
pub struct DiffusionForward {
    pub t: Vec<usize>,
    pub x_t: Tensor,
    pub eps: Tensor,
    pub eps_hat: Tensor,
    /// Mean squared error between `eps` and `eps_hat`.
    pub loss: Tensor,
}

/// ε-prediction objective for fixed `t` and `eps`.
pub fn diffusion_forward_with(
    x0: &Tensor,
    layout: &Tensor,
    style: &[u32],
    net: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    t: Vec<usize>,
    eps: Tensor,
) -> Result<DiffusionForward> {
    let x_t = q_sample(x0, &t, &eps, schedule)?;
    let eps_hat = net.predict(&x_t, &t, layout, style)?;
    let loss = (&eps_hat - &eps)?.sqr()?.mean_all()?;
    Ok(DiffusionForward {
        t,
        x_t,
        eps,
        eps_hat,
        loss,
    })
}

/// Draws `t ~ U{0..T−1}` per element and `ε ~ N(0, I)`, then evaluates
/// the ε-prediction objective.
pub fn diffusion_forward(
    x0: &Tensor,
    layout: &Tensor,
    style: &[u32],
    net: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<DiffusionForward> {
    use rand::Rng as _;
    let b = x0.dim(0)?;
    let t: Vec<usize> = (0..b).map(|_| rng.random_range(0..schedule.len())).collect();
    let eps = Tensor::from_vec(gaussian(rng, x0.elem_count()), x0.dims(), &Device::Cpu)?
        .to_dtype(x0.dtype())?;
    diffusion_forward_with(x0, layout, style, net, schedule, t, eps)
}

/// Scalar ε-prediction loss; differentiable with respect to the network.
pub fn diffusion_loss(
    x0: &Tensor,
    layout: &Tensor,
    style: &[u32],
    net: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Tensor> {
    Ok(diffusion_forward(x0, layout, style, net, schedule, rng)?.loss)
}
