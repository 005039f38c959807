//! Mesh-domain autoencoder: graph convolutions over the template topology,
//! a recurrent encoder emitting the same circular trajectory code as the
//! image side, and a decoder that displaces template vertices.

mod model;
mod train;

use thiserror::Error;

use crate::diffcore::{DiffError, FitError};
use crate::geometry::GeometryError;

pub use model::{graph_conv, graph_conv_values, mesh_recon_loss, MeshAe, MeshAeConfig, CHECKPOINT_KIND};
pub use train::train_mesh_ae;

#[derive(Debug, Error)]
pub enum MeshAeError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("training failed at {0}")]
    Fit(#[from] FitError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("mesh topology does not match the template")]
    TopologyMismatch,
    #[error("bad input: {0}")]
    Input(String),
    #[error("training pool is empty")]
    EmptyPool,
}
