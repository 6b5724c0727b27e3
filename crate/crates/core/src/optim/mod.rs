//! Trainers: Adam for the convolutional and baseline networks,
//! Levenberg-Marquardt for the small stage networks.

mod adam;
mod lm;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use lm::{compute_jacobian, lm_step, DampedSystem, LeastSquares, LmConfig, LmState, LmStep, NetworkFit};
pub use train::{
    gather_rows, regularized_loss, select_best_epoch, train, Batch, BatchNormStats, EpochRecord, History, Optimizer,
    StopCriterion, TrainConfig,
};
