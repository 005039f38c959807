//! Evaluation, run configuration, reports and the stage functions behind
//! the command-line tool.

mod config;
mod evaluate;
pub mod pipeline;
mod report;
pub mod rundir;
mod stats;

use std::path::Path;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::diffcore::DiffError;
use crate::geometry::GeometryError;
use crate::imageae::ImageAeError;
use crate::mapping::MappingError;
use crate::meshae::MeshAeError;
use crate::shapemodel::ShapeError;

pub use config::{CohortSection, EvalSection, ImageAeSection, MeshAeSection, RunConfig};
pub use evaluate::{
    evaluate_sample, evaluate_view, report, summarize, AsdRow, EvalReport, EvalSample, Failure, Phase, SampleResult,
    ViewEval, AVG_NOTE,
};
pub use report::{asd_table_csv, ef_scatter_csv, ef_scatter_svg, volume_curves_csv, volume_curves_svg};
pub use stats::{mean_std, pearson};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("statistics: {0}")]
    Stats(String),
    #[error("missing {what}: {path}")]
    Missing { what: String, path: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("image autoencoder: {0}")]
    ImageAe(#[from] ImageAeError),
    #[error("mesh autoencoder: {0}")]
    MeshAe(#[from] MeshAeError),
    #[error("mapping: {0}")]
    Mapping(#[from] MappingError),
}

impl EvalError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        EvalError::Io { path: path.display().to_string(), source }
    }
}
