//! Segmenter-discriminator objectives.
//!
//! With `K` layout classes, probabilities `p` over `K + 1` channels (the
//! last one "fake"), one-hot layout labels `l` and class weights `γ`:
//!
//! ```text
//! L_Dis     = −1/B Σ_b Σ_c γ_c Σ_ij l_bijc · log p(real)_bijc
//!             −1/B Σ_b Σ_ij log p(fake)_bij,K
//! L_adv_gen = −1/B Σ_b Σ_c γ_c Σ_ij l_bijc · log p(fake)_bijc
//! ```
//!
//! Probabilities are clamped to `[1e-7, 1]` before every logarithm.

use candle_core::Tensor;

use super::segmenter::Segmenter;
use super::weights::{class_weights, ClassWeights};
use crate::error::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-7;

fn check_dims(probs: &Tensor, labels: &Tensor) -> Result<()> {
    let (pb, pk, ph, pw) = probs.dims4()?;
    let (lb, lk, lh, lw) = labels.dims4()?;
    if (pb, ph, pw) != (lb, lh, lw) || pk != lk + 1 {
        return Err(Error::shape(
            format!("probabilities (B, {}, H, W) for labels {:?}", lk + 1, labels.dims()),
            format!("{:?}", probs.dims()),
        ));
    }
    Ok(())
}

/// `−1/B Σ γ_c Σ_ij l log p_c` over the first `K` probability channels.
fn weighted_ce(probs: &Tensor, labels: &Tensor, weights: &ClassWeights) -> Result<Tensor> {
    check_dims(probs, labels)?;
    let (b, k, _, _) = labels.dims4()?;
    if weights.num_classes() != k {
        return Err(Error::shape(format!("{k} class weights"), weights.num_classes()));
    }
    let dtype = probs.dtype();
    let logp = probs.narrow(1, 0, k)?.clamp(PROB_FLOOR, 1.0)?.log()?;
    let gamma = weights.tensor(dtype)?;
    let terms = labels.to_dtype(dtype)?.mul(&logp)?.broadcast_mul(&gamma)?;
    Ok((terms.sum_all()? * (-1.0 / b as f64))?)
}

/// Discriminator loss from precomputed probabilities.
pub fn discriminator_loss_from_probs(
    real_probs: &Tensor,
    fake_probs: &Tensor,
    labels: &Tensor,
    weights: &ClassWeights,
) -> Result<Tensor> {
    check_dims(fake_probs, labels)?;
    let real_term = weighted_ce(real_probs, labels, weights)?;
    let (b, k1, _, _) = fake_probs.dims4()?;
    let fake_term = (fake_probs
        .narrow(1, k1 - 1, 1)?
        .clamp(PROB_FLOOR, 1.0)?
        .log()?
        .sum_all()?
        * (-1.0 / b as f64))?;
    Ok((real_term + fake_term)?)
}

/// Generator adversarial loss from precomputed fake-image probabilities.
pub fn generator_adv_loss_from_probs(
    fake_probs: &Tensor,
    labels: &Tensor,
    weights: &ClassWeights,
) -> Result<Tensor> {
    weighted_ce(fake_probs, labels, weights)
}

fn check_classes(disc: &dyn Segmenter, labels: &Tensor) -> Result<()> {
    let k = labels.dim(1)?;
    if disc.num_layout_classes() != k {
        return Err(Error::shape(
            format!("{} layout classes", disc.num_layout_classes()),
            format!("{k} label channels"),
        ));
    }
    Ok(())
}

/// Discriminator loss: real pixels classified into their layout class
/// (class-weighted), fake pixels into the fake class.
pub fn discriminator_loss(
    real_images: &Tensor,
    fake_images: &Tensor,
    labels: &Tensor,
    disc: &dyn Segmenter,
) -> Result<Tensor> {
    check_classes(disc, labels)?;
    let weights = class_weights(labels)?;
    discriminator_loss_from_probs(
        &disc.probabilities(real_images)?,
        &disc.probabilities(fake_images)?,
        labels,
        &weights,
    )
}

/// Generator feedback: fake pixels should be classified as their intended
/// layout class. Gradients flow into `fake_images` only as far as the
/// caller lets them; the discriminator is not updated from this loss.
pub fn generator_adv_loss(fake_images: &Tensor, labels: &Tensor, disc: &dyn Segmenter) -> Result<Tensor> {
    check_classes(disc, labels)?;
    let weights = class_weights(labels)?;
    generator_adv_loss_from_probs(&disc.probabilities(fake_images)?, labels, &weights)
}
