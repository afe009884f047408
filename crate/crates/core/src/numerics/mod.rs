//! Tensors, reverse-mode differentiation, and optimization.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{sigmoid, softmax_in_place, Graph, Var, BCE_CLAMP};
pub use optim::{adam_step, lr_schedule, AdamConfig, AdamState};
pub use params::{Grads, ParamId, ParamStore};
pub use tensor::Tensor;
