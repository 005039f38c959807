use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::bvh::{Bvh, Triangle};
use super::{GeometryError, Structure, SurfaceMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        let det = rotation.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(GeometryError::NotRigid(format!("|RᵀR − I| = {ortho:.3e}, det = {det}")));
        }
        Ok(RigidTransform { rotation, translation })
    }

    /// Rotation by `angle` radians about `axis`, then translation.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let r = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        RigidTransform { rotation: *r.matrix(), translation }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Frobenius distance of the rotation from I and norm of the translation.
    pub fn deviation_from_identity(&self) -> (f64, f64) {
        ((self.rotation - Matrix3::identity()).norm(), self.translation.norm())
    }
}

/// Closed-form least-squares rigid map taking `source[i]` onto `target[i]`.
pub fn procrustes(source: &[Vec3], target: &[Vec3]) -> Result<RigidTransform, GeometryError> {
    if source.len() != target.len() || source.is_empty() {
        return Err(GeometryError::Degenerate(format!("{} source vs {} target points", source.len(), target.len())));
    }
    let n = source.len() as f64;
    let cs: Vec3 = source.iter().sum::<Vec3>() / n;
    let ct: Vec3 = target.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Ok(RigidTransform { rotation, translation: ct - rotation * cs })
}

fn covariance(points: &[Vec3]) -> (Vec3, Matrix3<f64>) {
    let n = points.len() as f64;
    let c: Vec3 = points.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    (c, cov / n)
}

/// Fails unless the points span at least a plane.
pub fn check_non_collinear(points: &[Vec3], what: &str) -> Result<(), GeometryError> {
    if points.len() < 3 {
        return Err(GeometryError::Degenerate(format!("{what}: need at least 3 points, got {}", points.len())));
    }
    let (_, cov) = covariance(points);
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(GeometryError::Degenerate(format!("{what}: points are collinear")));
    }
    Ok(())
}

/// Principal axes as columns, sorted by decreasing variance, right-handed.
fn principal_axes(points: &[Vec3]) -> (Vec3, Matrix3<f64>) {
    let (c, cov) = covariance(points);
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = Matrix3::zeros();
    for (k, &i) in idx.iter().enumerate() {
        axes.set_column(k, &eig.eigenvectors.column(i));
    }
    if axes.determinant() < 0.0 {
        let c2 = -axes.column(2);
        axes.set_column(2, &c2);
    }
    (c, axes)
}

/// Anything that can answer "closest point of me to p".
pub trait ClosestPoint {
    fn closest(&self, p: &Vec3) -> Vec3;
    /// Representative points, used for initial alignment.
    fn sample_points(&self) -> Vec<Vec3>;
}

/// Point set target backed by a BVH.
pub struct PointTarget {
    points: Vec<Vec3>,
    bvh: Bvh<Vec3>,
}

impl PointTarget {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointTarget { bvh: Bvh::build(points.clone()), points }
    }
}

impl ClosestPoint for PointTarget {
    fn closest(&self, p: &Vec3) -> Vec3 {
        self.bvh.nearest(p).expect("non-empty target").point
    }

    fn sample_points(&self) -> Vec<Vec3> {
        self.points.clone()
    }
}

/// Triangle-surface target: pairs are exact closest points on the surface.
pub struct SurfaceTarget {
    bvh: Bvh<Triangle>,
    vertices: Vec<Vec3>,
}

impl SurfaceTarget {
    pub fn new(mesh: &SurfaceMesh, structures: &[Structure]) -> Self {
        let tris: Vec<Triangle> = structures
            .iter()
            .flat_map(|&s| mesh.faces_of(s).map(|f| Triangle(mesh.triangle(f))).collect::<Vec<_>>())
            .collect();
        let mut idx: Vec<usize> = structures.iter().flat_map(|&s| mesh.vertex_indices_of(s)).collect();
        idx.sort_unstable();
        idx.dedup();
        SurfaceTarget { bvh: Bvh::build(tris), vertices: idx.iter().map(|&i| mesh.vertices()[i]).collect() }
    }

    pub fn from_triangles(tris: Vec<Triangle>) -> Self {
        let vertices = tris.iter().flat_map(|t| t.0).collect();
        SurfaceTarget { bvh: Bvh::build(tris), vertices }
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.bvh.nearest(p).expect("non-empty surface").distance
    }

    pub fn is_empty(&self) -> bool {
        self.bvh.is_empty()
    }
}

impl ClosestPoint for SurfaceTarget {
    fn closest(&self, p: &Vec3) -> Vec3 {
        self.bvh.nearest(p).expect("non-empty surface").point
    }

    fn sample_points(&self) -> Vec<Vec3> {
        self.vertices.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IcpInit {
    Identity,
    Centroid,
    PrincipalAxes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop when the paired RMS changes by less than this (mm).
    pub tolerance: f64,
    /// Starting poses tried; the lowest final RMS wins.
    pub inits: Vec<IcpInit>,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 50,
            tolerance: 1e-6,
            inits: vec![IcpInit::Identity, IcpInit::Centroid, IcpInit::PrincipalAxes],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub rms: f64,
    /// Paired RMS after each accepted iteration of the winning run.
    pub history: Vec<f64>,
}

fn paired_rms(source: &[Vec3], tf: &RigidTransform, target: &dyn ClosestPoint) -> (f64, Vec<Vec3>) {
    let mut pairs = Vec::with_capacity(source.len());
    let mut ss = 0.0;
    for s in source {
        let p = tf.apply(s);
        let q = target.closest(&p);
        ss += (p - q).norm_squared();
        pairs.push(q);
    }
    ((ss / source.len() as f64).sqrt(), pairs)
}

fn run_icp(source: &[Vec3], target: &dyn ClosestPoint, start: RigidTransform, cfg: &IcpConfig) -> IcpResult {
    let mut tf = start;
    let (mut rms, mut pairs) = paired_rms(source, &tf, target);
    let mut history = vec![rms];
    for _ in 0..cfg.max_iterations {
        let Ok(next) = procrustes(source, &pairs) else { break };
        let (next_rms, next_pairs) = paired_rms(source, &next, target);
        if !(next_rms <= rms) {
            break;
        }
        let change = rms - next_rms;
        tf = next;
        rms = next_rms;
        pairs = next_pairs;
        history.push(rms);
        if change < cfg.tolerance {
            break;
        }
    }
    IcpResult { transform: tf, rms, history }
}

/// Point-to-point ICP aligning `source` onto `target`.
pub fn icp_align(source: &[Vec3], target: &dyn ClosestPoint, cfg: &IcpConfig) -> Result<IcpResult, GeometryError> {
    check_non_collinear(source, "source")?;
    let target_pts = target.sample_points();
    check_non_collinear(&target_pts, "target")?;
    let (cs, axes_s) = principal_axes(source);
    let (ct, axes_t) = principal_axes(&target_pts);
    let mut starts = Vec::new();
    for init in &cfg.inits {
        match init {
            IcpInit::Identity => starts.push(RigidTransform::identity()),
            IcpInit::Centroid => starts.push(RigidTransform { rotation: Matrix3::identity(), translation: ct - cs }),
            IcpInit::PrincipalAxes => {
                // the four proper sign choices of the principal frame
                for flip in [[1.0, 1.0, 1.0], [-1.0, -1.0, 1.0], [-1.0, 1.0, -1.0], [1.0, -1.0, -1.0]] {
                    let r = axes_t * Matrix3::from_diagonal(&Vec3::from(flip)) * axes_s.transpose();
                    starts.push(RigidTransform { rotation: r, translation: ct - r * cs });
                }
            }
        }
    }
    if starts.is_empty() {
        starts.push(RigidTransform::identity());
    }
    let best = starts
        .into_iter()
        .map(|s| run_icp(source, target, s, cfg))
        .min_by(|a, b| a.rms.total_cmp(&b.rms))
        .expect("at least one start");
    Ok(best)
}
