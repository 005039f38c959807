use nalgebra::{DMatrix, SymmetricEigen};

use super::{synth_base_heart, ShapeError};
use crate::geometry::{SurfaceMesh, Vec3};

/// Mean shape plus orthonormal vertex-displacement modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    pub mean: SurfaceMesh,
    /// `modes[k]` is a flattened `[x0, y0, z0, x1, ...]` unit vector.
    pub modes: Vec<Vec<f64>>,
    /// Non-increasing.
    pub variances: Vec<f64>,
}

fn flatten(m: &SurfaceMesh) -> Vec<f64> {
    m.vertices().iter().flat_map(|v| [v.x, v.y, v.z]).collect()
}

fn unflatten(x: &[f64]) -> Vec<Vec3> {
    x.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Extends `basis` with unit vectors orthogonal to it, drawn from the
/// coordinate axes by Gram–Schmidt.
fn complete_basis(basis: &mut Vec<Vec<f64>>, want: usize, dim: usize) {
    let mut axis = 0;
    while basis.len() < want && axis < dim {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        axis += 1;
        for _ in 0..2 {
            for b in basis.iter() {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
}

/// PCA over flattened vertex coordinates. The covariance eigenproblem is
/// solved through the cohort Gram matrix, which is small. A centred cohort of
/// `M` meshes has rank at most `M − 1`, so `k` may not exceed that; modes
/// with zero variance are completed to an orthonormal set.
pub fn build_pca(cohort: &[SurfaceMesh], k: usize) -> Result<ShapeModel, ShapeError> {
    let m = cohort.len();
    if m < k + 1 || m < 2 {
        return Err(ShapeError::CohortTooSmall { needed: (k + 1).max(2), got: m });
    }
    if let Some(i) = cohort.iter().position(|c| !c.same_topology(&cohort[0])) {
        return Err(ShapeError::TopologyMismatch(i));
    }
    if k > m - 1 {
        return Err(ShapeError::TooManyModes { k, rank: m - 1 });
    }
    let rows: Vec<Vec<f64>> = cohort.iter().map(flatten).collect();
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for r in &rows {
        mean.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let centred: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(a, b)| a - b).collect()).collect();
    let denom = (m - 1) as f64;
    let gram = DMatrix::from_fn(m, m, |i, j| dot(&centred[i], &centred[j]) / denom);
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let scale = rows.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
    let floor = 1e-20 * scale * scale * dim as f64;
    let mut modes = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let lambda = eig.eigenvalues[i];
        if !(lambda > floor) {
            break;
        }
        let u = eig.eigenvectors.column(i);
        let mut v = vec![0.0; dim];
        for (j, c) in centred.iter().enumerate() {
            v.iter_mut().zip(c).for_each(|(a, b)| *a += u[j] * b);
        }
        let n = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|a| *a /= n);
        modes.push(v);
        variances.push(lambda);
    }
    complete_basis(&mut modes, k, dim);
    variances.resize(k, 0.0);
    let mean = cohort[0].with_vertices(unflatten(&mean))?;
    Ok(ShapeModel { mean, modes, variances })
}

/// `mean + Σ c_k·sqrt(variance_k)·mode_k`.
pub fn sample_shape(model: &ShapeModel, coefficients: &[f64]) -> Result<SurfaceMesh, ShapeError> {
    if coefficients.len() != model.modes.len() {
        return Err(ShapeError::CoefficientCount { expected: model.modes.len(), got: coefficients.len() });
    }
    if let Some(i) = coefficients.iter().position(|c| !c.is_finite()) {
        return Err(ShapeError::NonFinite(i));
    }
    let mut x = flatten(&model.mean);
    for ((c, var), mode) in coefficients.iter().zip(&model.variances).zip(&model.modes) {
        let w = c * var.sqrt();
        if w != 0.0 {
            x.iter_mut().zip(mode).for_each(|(a, b)| *a += w * b);
        }
    }
    Ok(model.mean.with_vertices(unflatten(&x))?)
}

impl ShapeModel {
    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// Standardized coefficients of `mesh` (zero along zero-variance modes).
    pub fn project(&self, mesh: &SurfaceMesh) -> Result<Vec<f64>, ShapeError> {
        if !mesh.same_topology(&self.mean) {
            return Err(ShapeError::TopologyMismatch(0));
        }
        let x = flatten(mesh);
        let mean = flatten(&self.mean);
        let d: Vec<f64> = x.iter().zip(&mean).map(|(a, b)| a - b).collect();
        Ok(self
            .modes
            .iter()
            .zip(&self.variances)
            .map(|(m, &v)| if v > 0.0 { dot(&d, m) / v.sqrt() } else { 0.0 })
            .collect())
    }
}

/// Shape model over `cohort_size` jittered synthetic hearts.
pub fn default_shape_model(detail: usize, k: usize, cohort_size: usize, seed: u64) -> Result<ShapeModel, ShapeError> {
    let cohort = (0..cohort_size as u64)
        .map(|i| synth_base_heart(seed.wrapping_mul(1_000_003).wrapping_add(i), detail))
        .collect::<Result<Vec<_>, _>>()?;
    build_pca(&cohort, k)
}
