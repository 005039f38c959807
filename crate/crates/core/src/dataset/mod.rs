//! Synthetic multi-view cine rendering, normalization, image files and the
//! unpaired training pools.

mod cine;
mod pools;
mod render;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use cine::{read_cine, write_cine, zscore_normalize, CineSequence, NormStats, ViewKind};
pub use pools::{make_unpaired_pools, DatasetManifest, Pools, PoolConfig, SampleRecord, Split};
pub use render::{render_cine, view_planes, RenderConfig, ViewPlanes};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{view} plane misses the heart at frame {frame}")]
    PlaneMiss { view: ViewKind, frame: usize },
    #[error("cannot place imaging planes: {0}")]
    Planes(String),
    #[error("grid size {0} is below the minimum of 8")]
    GridTooSmall(usize),
    #[error("cohort of {got} subjects is too small (need {needed})")]
    CohortTooSmall { needed: usize, got: usize },
    #[error("{path}: {detail}")]
    Format { path: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
