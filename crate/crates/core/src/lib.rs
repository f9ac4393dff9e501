//! Attention-guided conditional adversarial networks for turning flash
//! photographs into ambient-lit ones.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below name the single-precision instantiations used for training
//! and inference.

pub mod data;
pub mod error;
pub mod imagecore;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Image32 = imagecore::Image<f32>;
pub type Image64 = imagecore::Image<f64>;
pub type AttentionMap32 = imagecore::AttentionMap<f32>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Generator32 = networks::Generator<f32>;
pub type Discriminator32 = networks::Discriminator<f32>;
pub type ModelBundle32 = networks::ModelBundle<f32>;
pub type Trainer32 = trainer::Trainer<f32>;
