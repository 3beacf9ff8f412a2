//! Minimal reverse-mode differentiation and the MLP layers built on it.

mod graph;
mod mlp;
mod tensor;

pub use graph::{Gradients, Graph, NodeId, OpKind};
pub use mlp::{Mlp, MlpNodes};
pub use tensor::Tensor;
