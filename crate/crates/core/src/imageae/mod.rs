//! Image-domain autoencoder: per-view convolutional + recurrent encoders
//! emitting a circular latent trajectory, and a transposed-convolution
//! decoder.

mod model;
mod train;
pub mod trajectory;

use thiserror::Error;

use crate::diffcore::{DiffError, FitError};

pub use model::{recon_loss, ImageAe, ImageAeConfig, ImageInput, ViewSelection, CHECKPOINT_KIND};
pub use train::{train_image_ae, TrainReport};
pub use trajectory::{latent_point, TrajectoryCode};

#[derive(Debug, Error)]
pub enum ImageAeError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("training failed at {0}")]
    Fit(#[from] FitError),
    #[error("bad input: {0}")]
    Input(String),
    #[error("training pool is empty")]
    EmptyPool,
}
