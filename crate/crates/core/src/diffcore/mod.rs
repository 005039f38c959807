//! Reverse-mode differentiation over dense `f64` tensors, plus Adam.

mod adam;
pub mod checkpoint;
mod fit;
mod gradcheck;
mod graph;
pub mod linalg;
pub mod nn;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use checkpoint::Checkpoint;
pub use fit::{fit, mean_loss, FitConfig, FitError};
pub use gradcheck::{grad_check, grad_check_sampled, grad_check_with_floor, GradCheckReport, NETWORK_FLOOR};
pub use graph::{sigmoid, softplus, Bound, Gradients, Graph, SparseMatrix, Unary, Var};
pub use params::{glorot, ParamSet};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch at {node}: {detail}")]
    Shape { node: String, detail: String },
    #[error("non-finite value produced at {node}")]
    NonFinite { node: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("invalid tensor: {0}")]
    BadShape(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` bound twice")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
