//! Objectives, optimizer, schedule and the training loop.

pub mod loss;
pub mod optim;
pub mod schedule;
mod trainer;

pub use loss::{batch_loss, BalanceAggregation, BatchLoss, LossConfig};
pub use optim::{clip_global_norm, AdamW, AdamWConfig};
pub use schedule::lr_at;
pub use trainer::{
    train, train_with, validation_mse, EpochRecord, StepRecord, TrainConfig, TrainOutputs, TrainReport, TrainSet,
};
