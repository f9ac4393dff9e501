//! Minimal differentiable building blocks for the generator and discriminator.

pub mod conv;
mod graph;
mod optim;
pub(crate) mod params;
mod tensor;

pub use graph::{Gradients, Graph, NodeId};
pub use optim::{Adam, AdamConfig};
pub use params::ParamStore;
pub use tensor::Tensor;
