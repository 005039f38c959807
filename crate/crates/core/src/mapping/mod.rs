//! Unpaired translation between image and mesh trajectory codes: the
//! generator/discriminator pairs, the EF predictor, their losses, joint
//! training with early stopping, and the image-to-mesh inference path.

mod ef;
mod infer;
pub mod losses;
pub mod nets;
mod train;

use thiserror::Error;

use crate::diffcore::{DiffError, FitError};
use crate::imageae::ImageAeError;
use crate::meshae::MeshAeError;

pub use ef::{decoded_neighbors, train_ef_predictor, EfConfig, EfPredictor, EfReport, LabeledCodes, EF_CHECKPOINT_KIND};
pub use infer::infer_mesh_video;
pub use losses::{adversarial_losses, cycle_loss, ef_loss, generator_objective, AdversarialLosses, GeneratorTerms};
pub use nets::{BoundNetworks, Networks, Standardizer};
pub use train::{
    train_mapping, EpochRecord, Mapping, MappingData, MappingReport, TrainConfig, MAPPING_CHECKPOINT_KIND,
};

#[derive(Debug, Error)]
pub enum MappingError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("training failed at {0}")]
    Fit(#[from] FitError),
    #[error("epoch {epoch}: {source}")]
    Training { epoch: usize, source: DiffError },
    #[error("non-finite {component} loss at epoch {epoch}")]
    NonFinite { component: &'static str, epoch: usize },
    #[error(transparent)]
    ImageAe(#[from] ImageAeError),
    #[error(transparent)]
    MeshAe(#[from] MeshAeError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("bad input: {0}")]
    Input(String),
    #[error("{0} is empty")]
    EmptyPool(&'static str),
}
