//! Procedural synthetic hearts, a PCA shape model over them, and periodic
//! chamber motion producing mesh-video cohorts.

mod cohort;
mod heart;
mod motion;
mod pca;

use thiserror::Error;

use crate::geometry::{GeometryError, Structure};

pub use cohort::{generate_cohort, CohortConfig, CohortManifest, CohortSample, ManifestEntry};
pub use heart::{synth_base_heart, Ellipsoid, HeartLayout};
pub use motion::{animate, generate_mesh_video, motion_frame, EfRecord, MotionBounds, MotionModel};
pub use pca::{build_pca, default_shape_model, sample_shape, ShapeModel};

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("detail level must be at least 1")]
    InvalidDetail,
    #[error("need at least {needed} meshes, got {got}")]
    CohortTooSmall { needed: usize, got: usize },
    #[error("cohort mesh {0} does not share the first mesh's topology")]
    TopologyMismatch(usize),
    #[error("{k} modes requested but the cohort supports at most {rank}")]
    TooManyModes { k: usize, rank: usize },
    #[error("expected {expected} coefficients, got {got}")]
    CoefficientCount { expected: usize, got: usize },
    #[error("coefficient {0} is not finite")]
    NonFinite(usize),
    #[error("{structure} amplitude {amplitude} outside [0, 0.5]")]
    InvalidAmplitude { structure: Structure, amplitude: f64 },
    #[error("a mesh video needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("cohort count must be at least 1")]
    EmptyCohort,
}
