//! Optimizer, losses and the training loop.

mod adam;
mod loss;
mod train;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use loss::{evaluate_loss, loss_bce_mean, loss_gaussian_nll};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome, TrainOutput, CHECKPOINT_FILE, METRICS_FILE};
