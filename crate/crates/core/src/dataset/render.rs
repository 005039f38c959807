use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CineSequence, DatasetError, ViewKind};
use crate::geometry::{rasterize, slice_mesh, Grid, MeshVideo, Plane, Structure, SurfaceMesh, Vec2, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub size: usize,
    pub fov_mm: f64,
    /// Apex-to-base fractions of the LV long-axis extent.
    pub sax_fractions: [f64; 3],
    pub noise_sigma: f64,
    pub blood: f64,
    pub myocardium: f64,
    pub blur: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            size: 64,
            fov_mm: 160.0,
            sax_fractions: [0.25, 0.5, 0.75],
            noise_sigma: 0.05,
            blood: 1.0,
            myocardium: 0.6,
            blur: false,
        }
    }
}

impl RenderConfig {
    pub fn mm_per_px(&self) -> f64 {
        self.fov_mm / self.size as f64
    }
}

/// Imaging planes with the in-plane grid centre of each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewPlanes {
    pub views: Vec<(ViewKind, Plane, Vec2)>,
    /// Unit LV long axis, apex towards base.
    pub long_axis: Vec3,
}

/// Planes from the end-diastolic geometry of `mesh`: three short-axis planes
/// orthogonal to the LV long axis, and a long-axis plane containing that
/// axis and the midpoint of the atrial centroids.
pub fn view_planes(mesh: &SurfaceMesh, cfg: &RenderConfig) -> Result<ViewPlanes, DatasetError> {
    let lv: Vec<Vec3> = mesh.vertex_indices_of(Structure::LV).iter().map(|&i| mesh.vertices()[i]).collect();
    if lv.len() < 4 {
        return Err(DatasetError::Planes("mesh has no LV".into()));
    }
    let c = lv.iter().sum::<Vec3>() / lv.len() as f64;
    let mut cov = nalgebra::Matrix3::zeros();
    for p in &lv {
        cov += (p - c) * (p - c).transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut axis: Vec3 = eig.eigenvectors.column(eig.eigenvalues.imax()).into();
    let atria: Vec<Vec3> = [Structure::LA, Structure::RA].iter().filter_map(|&s| mesh.centroid_of(s)).collect();
    if atria.is_empty() {
        return Err(DatasetError::Planes("mesh has no atria".into()));
    }
    let atria_mid = atria.iter().sum::<Vec3>() / atria.len() as f64;
    if axis.dot(&(atria_mid - c)) < 0.0 {
        axis = -axis;
    }
    let proj: Vec<f64> = lv.iter().map(|p| (p - c).dot(&axis)).collect();
    let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let heart = mesh.vertices().iter().sum::<Vec3>() / mesh.vertex_count() as f64;
    let lax_normal = axis.cross(&(atria_mid - c));
    if lax_normal.norm() < 1e-6 * (atria_mid - c).norm().max(1.0) {
        return Err(DatasetError::Planes("atria lie on the LV long axis".into()));
    }
    let mut views = Vec::with_capacity(4);
    let lax = Plane::new(c, lax_normal, Some(axis))?;
    views.push((ViewKind::Lax, lax, lax.to_plane(&heart)));
    let sax = [ViewKind::SaxApical, ViewKind::SaxMid, ViewKind::SaxBasal];
    for (kind, f) in sax.into_iter().zip(cfg.sax_fractions) {
        let origin = c + axis * (lo + f * (hi - lo));
        let p = Plane::new(origin, axis, Some(lax_normal.cross(&axis)))?;
        views.push((kind, p, p.to_plane(&heart)));
    }
    Ok(ViewPlanes { views, long_axis: axis })
}

fn intensity(label: u8, cfg: &RenderConfig) -> f64 {
    match Structure::from_label(label) {
        None => 0.0,
        Some(Structure::Myo) => cfg.myocardium,
        Some(_) => cfg.blood,
    }
}

fn blur3(img: &mut [f64], n: usize) {
    // separable [1 2 1]/4 with clamped borders
    let k = [0.25, 0.5, 0.25];
    let src = img.to_vec();
    let mut tmp = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            tmp[r * n + c] = (0..3).map(|j| k[j] * src[r * n + (c + j).saturating_sub(1).min(n - 1)]).sum();
        }
    }
    for r in 0..n {
        for c in 0..n {
            img[r * n + c] = (0..3).map(|j| k[j] * tmp[(r + j).saturating_sub(1).min(n - 1) * n + c]).sum();
        }
    }
}

/// Renders every frame of `video` through fixed planes placed on frame 0.
pub fn render_cine(video: &MeshVideo, cfg: &RenderConfig, seed: u64) -> Result<CineSequence, DatasetError> {
    if cfg.size < 8 {
        return Err(DatasetError::GridTooSmall(cfg.size));
    }
    let planes = view_planes(video.frame(0), cfg)?;
    let n = cfg.size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");
    let mut data = Vec::with_capacity(video.len() * planes.views.len() * n * n);
    for (t, mesh) in video.frames().iter().enumerate() {
        for (kind, plane, centre) in &planes.views {
            let contours = slice_mesh(mesh, plane)?;
            if contours.is_empty() {
                return Err(DatasetError::PlaneMiss { view: *kind, frame: t });
            }
            let labels = rasterize(&contours, &Grid { size: n, mm_per_px: cfg.mm_per_px(), center: *centre });
            let mut img: Vec<f64> = labels.labels.iter().map(|&l| intensity(l, cfg)).collect();
            if cfg.blur {
                blur3(&mut img, n);
            }
            if cfg.noise_sigma > 0.0 {
                img.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            }
            data.extend(img.iter().map(|&v| v as f32));
        }
    }
    let kinds = planes.views.iter().map(|v| v.0).collect();
    Ok(CineSequence::new(video.len(), kinds, n, cfg.mm_per_px(), data))
}
