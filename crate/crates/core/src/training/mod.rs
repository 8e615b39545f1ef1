//! Optimization: weighted loss, AdamW, cosine schedule, the epoch loop and gradient checking.

pub mod data;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod pretrain;
pub mod schedule;
pub mod trainer;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use loss::{class_weights, weighted_cross_entropy, ClassWeighting};
pub use optim::{AdamW, AdamWConfig};
pub use schedule::lr_at;
pub use data::ClipSet;
pub use pretrain::{pretrain_backbone, pretrain_frames, pretrain_to_dir, PretrainConfig};
pub use trainer::{evaluate, train, EpochRecord, Evaluation, TrainConfig, TrainOutcome, TrainState};
