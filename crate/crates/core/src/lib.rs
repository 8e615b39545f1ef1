//! Sentence-level sign-language video classification.
//!
//! Clips of `T` frames pass through a ResNet backbone one frame at a time;
//! the per-frame features are projected, position-encoded, mixed by a
//! transformer encoder and a bidirectional LSTM, mean-pooled over time and
//! classified. Everything numeric is generic over [`Scalar`] (`f32` for
//! training, `f64` for gradient checks).

pub mod ablate;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod scalar;
pub mod seqmodel;
pub mod synthgen;
pub mod training;

pub use config::RunConfig;
pub use error::{Error, ErrorCategory, Result};
pub use model::{Mode, ModelConfig, SignTransformer};
pub use params::ParamSet;
pub use scalar::Scalar;

pub type SignTransformer32 = SignTransformer<f32>;
pub type SignTransformer64 = SignTransformer<f64>;
pub type ParamSet32 = ParamSet<f32>;
pub type ParamSet64 = ParamSet<f64>;
