//! Labeled surface meshes and the geometric algorithms built on them.

mod adjacency;
mod bvh;
mod distance;
mod icp;
pub mod io;
mod mesh;
mod raster;
mod slice;
mod volume;

use thiserror::Error;

pub use adjacency::{adjacency, AdjacencyGraph};
pub use bvh::{closest_point_on_triangle, Bvh, Nearest, Primitive, Triangle};
pub use distance::{average_surface_distance, AsdMode, Surface, SurfaceSampling};
pub use icp::{
    check_non_collinear, icp_align, procrustes, ClosestPoint, IcpConfig, IcpInit, IcpResult, PointTarget,
    RigidTransform, SurfaceTarget,
};
pub use mesh::{icosphere, triangle_area, MeshVideo, Structure, SurfaceMesh, Vec3};
pub use raster::{rasterize, Grid, LabelImage};
pub use slice::{slice_mesh, ContourSet, Plane, Polyline, Vec2};
pub use volume::{ejection_fraction, enclosed_volume, volume_curve, EjectionFraction, MM3_PER_ML};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),
    #[error("unknown structure '{0}'")]
    UnknownStructure(String),
    #[error("mesh has no faces labeled {0}")]
    MissingStructure(Structure),
    #[error("{structure} surface is open ({boundary_edges} boundary edges)")]
    OpenSurface { structure: Structure, boundary_edges: usize },
    #[error("invalid volume curve: {0}")]
    InvalidCurve(String),
    #[error("plane normal has zero length")]
    DegeneratePlane,
    #[error("degenerate point set: {0}")]
    Degenerate(String),
    #[error("empty point set")]
    EmptyPointSet,
    #[error("not a rigid transform: {0}")]
    NotRigid(String),
    #[error("{path}: {detail}")]
    Format { path: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
