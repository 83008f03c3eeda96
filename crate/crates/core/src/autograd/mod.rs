//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod check;
mod graph;
mod tensor;

pub use check::{grad_check, DEFAULT_EPS, MODEL_EPS};
pub use graph::{sigmoid, softmax, Activation, BinaryOp, Graph, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
