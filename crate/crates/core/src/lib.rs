//! Semi-supervised video action recognition with two self-supervised
//! teachers and a distillation-trained student.
//!
//! A temporally-invariant teacher and a temporally-distinctive teacher are
//! pretrained contrastively, finetuned on the labeled split, and their
//! predictions are mixed per video by a temporal self-similarity score before
//! being distilled into a student. The crate ships a synthetic video
//! benchmark with periodic ("atomic") and multi-phase ("composite") classes
//! so every stage can be exercised on a CPU.
//!
//! Numeric code is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks); the aliases below pin the common instantiations.

pub mod balance;
pub mod checkpoint;
pub mod config;
pub mod datamodel;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod synthgen;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Encoder weights used for training and checkpoints.
pub type Encoder = encoder::EncoderWeights<f32>;
/// Double-precision encoder, used by gradient checks.
pub type Encoder64 = encoder::EncoderWeights<f64>;
pub type Clip = Tensor<f32>;
pub type Clip64 = Tensor<f64>;
pub type Projection = encoder::Projection<f32>;
pub type PredictionVector = encoder::PredictionVector<f32>;
pub type ClipFeature = encoder::ClipFeature<f32>;
