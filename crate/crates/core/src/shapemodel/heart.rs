use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ShapeError;
use crate::geometry::{icosphere, Structure, SurfaceMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: Vec3,
    pub semi_axes: Vec3,
}

/// Axis-aligned ellipsoids per structure. The long axis of the left
/// ventricle is +z (apex at −z, atria above the base) and all centres lie
/// in the y = 0 four-chamber plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartLayout {
    pub parts: Vec<(Structure, Ellipsoid)>,
}

impl Default for HeartLayout {
    fn default() -> Self {
        let e = |c: [f64; 3], a: [f64; 3]| Ellipsoid { center: Vec3::from(c), semi_axes: Vec3::from(a) };
        HeartLayout {
            parts: vec![
                (Structure::LV, e([0.0, 0.0, 0.0], [22.0, 22.0, 40.0])),
                (Structure::RV, e([44.0, 0.0, 4.0], [16.0, 26.0, 36.0])),
                (Structure::LA, e([-4.0, 0.0, 60.0], [20.0, 20.0, 18.0])),
                (Structure::RA, e([42.0, 0.0, 62.0], [20.0, 20.0, 20.0])),
                (Structure::Myo, e([0.0, 0.0, 0.0], [29.0, 29.0, 46.0])),
            ],
        }
    }
}

impl HeartLayout {
    /// Seeded anatomical variation around the default layout: a global scale
    /// of ±8%, per-axis scaling of ±8% and centre shifts of ±3 mm. The
    /// myocardium follows the left ventricle so the wall keeps its thickness.
    pub fn jittered(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let global = rng.gen_range(0.92..1.08);
        let mut parts = HeartLayout::default().parts;
        let mut lv_shift = Vec3::zeros();
        let mut lv_scale = Vec3::repeat(1.0);
        for (s, e) in parts.iter_mut() {
            let (shift, scale) = if *s == Structure::Myo {
                (lv_shift, lv_scale)
            } else {
                let shift = Vec3::from_fn(|_, _| rng.gen_range(-3.0..3.0));
                let scale = Vec3::from_fn(|_, _| rng.gen_range(0.92..1.08));
                if *s == Structure::LV {
                    lv_shift = shift;
                    lv_scale = scale;
                }
                (shift, scale)
            };
            e.center = (e.center + shift) * global;
            e.semi_axes = e.semi_axes.component_mul(&scale) * global;
        }
        HeartLayout { parts }
    }

    pub fn build(&self, detail: usize) -> Result<SurfaceMesh, ShapeError> {
        if detail < 1 {
            return Err(ShapeError::InvalidDetail);
        }
        let (unit, faces) = icosphere(1.0, detail);
        let parts = self
            .parts
            .iter()
            .map(|(s, e)| {
                let v = unit.iter().map(|p| e.center + p.component_mul(&e.semi_axes)).collect();
                SurfaceMesh::single(v, faces.clone(), *s)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SurfaceMesh::merge(&parts))
    }
}

/// Four closed ellipsoidal chambers plus an epicardial shell around the left
/// ventricle; `detail` is the icosphere subdivision level.
pub fn synth_base_heart(seed: u64, detail: usize) -> Result<SurfaceMesh, ShapeError> {
    HeartLayout::jittered(seed).build(detail)
}
