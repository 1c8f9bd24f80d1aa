//! Adversarial supervision of the diffusion generator by a per-pixel
//! segmenter-discriminator.

mod losses;
mod segmenter;
mod train;
mod weights;

pub use losses::{
    discriminator_loss, discriminator_loss_from_probs, generator_adv_loss,
    generator_adv_loss_from_probs, PROB_FLOOR,
};
pub use segmenter::{Segmenter, SegmenterConfig, SegmenterDiscriminator};
pub use train::{
    discriminator_phase, fake_estimates, fit_segmenter, generator_phase, load_state, read_loss_log, save_state, total_steps, train,
    train_step, AdvConfig, AdvDataset, LossLog, LossRecord, SegmenterCheckpoint, TrainBatch,
    TrainState, DISCRIMINATOR_FILE, GENERATOR_FILE, HISTORY_FILE, LOSS_LOG_FILE,
    SEGMENTER_CHECKPOINT_VERSION,
};
pub use weights::{class_weights, class_weights_from_slice, ClassWeights};
