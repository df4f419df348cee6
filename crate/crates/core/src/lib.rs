//! Neural sequence labeling for slot filling.
//!
//! The crate provides a small reverse-mode autodiff engine, BiLSTM encoders,
//! a linear-chain CRF, and four tagging topologies (single-task BiLSTM-CRF,
//! vanilla multi-task, hierarchical multi-task, and deep cascade multi-task
//! with residual connections). The corpus module builds distantly supervised
//! training data from a term dictionary; the eval module scores IOB chunks.

pub mod corpus;
pub mod crf;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod numeric;
pub mod task;

pub use error::{Error, Result};
pub use task::TaskId;
