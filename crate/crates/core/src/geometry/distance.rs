use serde::{Deserialize, Serialize};

use super::bvh::{Bvh, Triangle};
use super::{GeometryError, Structure, SurfaceMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsdMode {
    /// Mean of the two directed averages.
    Symmetric,
    /// Ground-truth points to the predicted surface only.
    GtToMesh,
}

impl AsdMode {
    pub fn name(self) -> &'static str {
        match self {
            AsdMode::Symmetric => "symmetric",
            AsdMode::GtToMesh => "gt_to_mesh",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSampling {
    pub points_per_structure: usize,
    pub seed: u64,
}

impl Default for SurfaceSampling {
    fn default() -> Self {
        SurfaceSampling { points_per_structure: 2000, seed: 0 }
    }
}

/// One side of a distance comparison.
#[derive(Debug, Clone, Copy)]
pub enum Surface<'a> {
    Points(&'a [Vec3]),
    Mesh { mesh: &'a SurfaceMesh, structure: Structure },
}

enum Index {
    Points(Bvh<Vec3>),
    Triangles(Bvh<Triangle>),
}

impl Index {
    fn distance(&self, p: &Vec3) -> f64 {
        match self {
            Index::Points(b) => b.nearest(p).map_or(f64::INFINITY, |n| n.distance),
            Index::Triangles(b) => b.nearest(p).map_or(f64::INFINITY, |n| n.distance),
        }
    }
}

impl Surface<'_> {
    fn samples(&self, sampling: &SurfaceSampling) -> Result<Vec<Vec3>, GeometryError> {
        let pts = match self {
            Surface::Points(p) => p.to_vec(),
            Surface::Mesh { mesh, structure } => mesh.sample_surface(
                *structure,
                sampling.points_per_structure,
                sampling.seed.wrapping_mul(31).wrapping_add(structure.index() as u64),
            )?,
        };
        if pts.is_empty() {
            return Err(GeometryError::EmptyPointSet);
        }
        Ok(pts)
    }

    fn index(&self) -> Result<Index, GeometryError> {
        match self {
            Surface::Points(p) if p.is_empty() => Err(GeometryError::EmptyPointSet),
            Surface::Points(p) => Ok(Index::Points(Bvh::build(p.to_vec()))),
            Surface::Mesh { mesh, structure } => {
                let tris: Vec<Triangle> = mesh.faces_of(*structure).map(|f| Triangle(mesh.triangle(f))).collect();
                if tris.is_empty() {
                    return Err(GeometryError::MissingStructure(*structure));
                }
                Ok(Index::Triangles(Bvh::build(tris)))
            }
        }
    }
}

fn directed(from: &[Vec3], to: &Index) -> f64 {
    from.iter().map(|p| to.distance(p)).sum::<f64>() / from.len() as f64
}

/// Average surface distance between `predicted` and `gt` (mm). Point sets
/// are compared by nearest point, mesh surfaces by exact point-to-triangle
/// distance; a mesh is represented by seeded uniform-area samples when it is
/// the source of a directed average.
pub fn average_surface_distance(
    predicted: &Surface,
    gt: &Surface,
    mode: AsdMode,
    sampling: &SurfaceSampling,
) -> Result<f64, GeometryError> {
    let gt_pts = gt.samples(sampling)?;
    let pred_index = predicted.index()?;
    let gt_to_pred = directed(&gt_pts, &pred_index);
    match mode {
        AsdMode::GtToMesh => Ok(gt_to_pred),
        AsdMode::Symmetric => {
            let pred_pts = predicted.samples(sampling)?;
            let pred_to_gt = directed(&pred_pts, &gt.index()?);
            Ok(0.5 * (gt_to_pred + pred_to_gt))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(z: f64, n: usize, step: f64) -> Vec<Vec3> {
        (0..n).flat_map(|i| (0..n).map(move |j| Vec3::new(i as f64 * step, j as f64 * step, z))).collect()
    }

    #[test]
    fn identical_clouds_are_zero() {
        let a = grid(0.0, 20, 0.5);
        let d = average_surface_distance(&Surface::Points(&a), &Surface::Points(&a), AsdMode::Symmetric, &SurfaceSampling::default())
            .unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn unit_offset_along_x() {
        // 1 mm grid spacing, shift by one spacing: interior points coincide
        // with neighbours, so use spacing 3 to keep the offset the nearest.
        let a = grid(0.0, 20, 3.0);
        let b: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(1.0, 0.0, 0.0)).collect();
        let d = average_surface_distance(&Surface::Points(&a), &Surface::Points(&b), AsdMode::Symmetric, &SurfaceSampling::default())
            .unwrap();
        assert!((d - 1.0).abs() < 1e-12, "{d}");
    }

    #[test]
    fn empty_rejected() {
        let a = grid(0.0, 3, 1.0);
        let e: Vec<Vec3> = vec![];
        assert!(average_surface_distance(&Surface::Points(&a), &Surface::Points(&e), AsdMode::Symmetric, &SurfaceSampling::default())
            .is_err());
    }
}
