//! Dense `f64` arrays, reverse-mode autodiff, Adam, and gradient checking.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod graph;
mod kernels;
mod params;
mod second_order;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, PoolCap, UnaryBackward, Var};
pub use params::{glorot_uniform, ParameterStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("invalid tensor: shape {shape:?} does not hold {len} values")]
    BadTensor { shape: Vec<usize>, len: usize },
    #[error("shape mismatch at {node}: {detail}")]
    Shape { node: String, detail: String },
    #[error("loss node {node} is not scalar (shape {shape:?})")]
    NonScalarLoss { node: String, shape: Vec<usize> },
    #[error("second-order differentiation not supported through {node}")]
    UnsupportedSecondOrder { node: String },
    #[error("non-finite value produced at {node}")]
    NonFinite { node: String },
    #[error("divergence: non-finite gradient for parameter `{param}` at step {step}")]
    Divergence { param: String, step: u64 },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
