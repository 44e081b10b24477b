//! Dense `f64` tensors and a reverse-mode autodiff graph over them.

mod graph;
pub mod kernels;
mod tensor;

pub use graph::{Graph, Var};
pub use tensor::Tensor;
