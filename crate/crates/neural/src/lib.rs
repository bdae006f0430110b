//! Differentiable building blocks for node regression on option graphs.
//!
//! A small reverse-mode autodiff [`tape`] over row-batched `f64` matrices
//! carries exact alpha-entmax, oblivious-tree layers, the low-rank cross
//! network, revised tree layers with batch-normalized gates, the tree-based
//! graph convolution and two benchmark graph convolutions.

pub mod bench;
pub mod cross;
pub mod ctx;
pub mod entmax;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod params;
pub mod rnode;
pub mod tape;
pub mod trees;

pub use ctx::{apply_running_updates, Ctx, Mode};
pub use error::{NeuralError, Result};
pub use graph::GraphBatch;
pub use model::{match_param_count, param_count, Arch, Checkpoint, Model, ModelSpec};
pub use params::{Adam, AdamConfig, ParamId, ParamStore};
pub use tape::{Mat, Tape, Var};
