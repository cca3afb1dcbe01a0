//! Tensor arithmetic with reverse-mode automatic differentiation.

mod graph;
mod tensor;

pub use graph::{BnBatchStats, Gradients, Graph, NodeId, BN_EPS};
pub use tensor::Tensor;
