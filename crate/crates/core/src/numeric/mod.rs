//! Dense tensors, a reverse-mode autodiff graph, Adam and gradient clipping.

mod gemm;
mod graph;
pub mod init;
mod optim;
mod params;
mod tensor;

pub use graph::{CustomOp, Graph, NodeId};
pub use optim::{clip_global_norm, AdamConfig, AdamState};
pub use params::{Gradients, NamedParam, ParamId, ParamStore};
pub use tensor::Tensor;

/// Scalar type used by every tensor.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;
