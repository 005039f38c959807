use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_shape, ShapeError, ShapeModel};
use crate::geometry::{MeshVideo, Structure, SurfaceMesh};

/// Radial contraction per structure over one cycle. Structures without an
/// entry stay still.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MotionModel {
    /// Fraction of radius lost at peak contraction, in [0, 0.5].
    pub amplitudes: BTreeMap<Structure, f64>,
    /// Radians; contraction peaks at `2πt/N + phase = π`.
    pub phases: BTreeMap<Structure, f64>,
}

/// Ground-truth ejection fraction per chamber.
pub type EfRecord = BTreeMap<Structure, f64>;

impl MotionModel {
    pub fn validate(&self) -> Result<(), ShapeError> {
        for (&structure, &amplitude) in &self.amplitudes {
            if !(0.0..=0.5).contains(&amplitude) {
                return Err(ShapeError::InvalidAmplitude { structure, amplitude });
            }
        }
        Ok(())
    }

    pub fn amplitude(&self, s: Structure) -> f64 {
        self.amplitudes.get(&s).copied().unwrap_or(0.0)
    }

    pub fn phase(&self, s: Structure) -> f64 {
        self.phases.get(&s).copied().unwrap_or(0.0)
    }

    /// Radial scale of `s` at (possibly fractional) time `t` of `n`.
    pub fn scale(&self, s: Structure, t: f64, n: usize) -> f64 {
        let a = self.amplitude(s);
        1.0 - a * (1.0 - (2.0 * PI * t / n as f64 + self.phase(s)).cos()) / 2.0
    }

    /// EF implied by the per-frame cubic volume scaling.
    pub fn analytic_ef(&self, s: Structure, n: usize) -> f64 {
        let vols: Vec<f64> = (0..n).map(|t| self.scale(s, t as f64, n).powi(3)).collect();
        let max = vols.iter().copied().fold(f64::MIN, f64::max);
        let min = vols.iter().copied().fold(f64::MAX, f64::min);
        (max - min) / max
    }
}

/// Sampling ranges for random motion. Ventricles contract around phase 0,
/// atria half a cycle later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionBounds {
    pub lv: (f64, f64),
    pub rv: (f64, f64),
    pub atria: (f64, f64),
    pub myo: (f64, f64),
    pub phase_jitter: f64,
}

impl Default for MotionBounds {
    fn default() -> Self {
        // LV EF = 1 − (1 − a)³ spans about [0.27, 0.74]
        MotionBounds { lv: (0.10, 0.36), rv: (0.10, 0.32), atria: (0.05, 0.25), myo: (0.03, 0.10), phase_jitter: 0.3 }
    }
}

impl MotionBounds {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> MotionModel {
        let mut u = |r: (f64, f64)| if r.1 > r.0 { rng.gen_range(r.0..r.1) } else { r.0 };
        let (lv, rv, la, ra, myo) = (u(self.lv), u(self.rv), u(self.atria), u(self.atria), u(self.myo));
        let j = self.phase_jitter;
        let mut p = |c: f64, w: f64| if w > 0.0 { c + rng.gen_range(-w..w) } else { c };
        let ventricles = p(0.0, j);
        let atria = p(PI, j);
        let rv_phase = p(ventricles, j / 3.0);
        let ra_phase = p(atria, j / 3.0);
        MotionModel {
            amplitudes: [(Structure::LV, lv), (Structure::RV, rv), (Structure::LA, la), (Structure::RA, ra), (Structure::Myo, myo)]
                .into_iter()
                .collect(),
            phases: [
                (Structure::LV, ventricles),
                (Structure::RV, rv_phase),
                (Structure::LA, atria),
                (Structure::RA, ra_phase),
                (Structure::Myo, ventricles),
            ]
            .into_iter()
            .collect(),
        }
    }
}

/// `base` with every structure scaled about its own vertex centroid.
/// Structures are assumed not to share vertices.
pub fn motion_frame(base: &SurfaceMesh, motion: &MotionModel, t: f64, n: usize) -> Result<SurfaceMesh, ShapeError> {
    let mut v = base.vertices().to_vec();
    for s in base.structures() {
        let k = motion.scale(s, t, n);
        if k == 1.0 {
            continue;
        }
        let c = base.centroid_of(s).expect("listed structure has vertices");
        for i in base.vertex_indices_of(s) {
            v[i] = c + (base.vertices()[i] - c) * k;
        }
    }
    Ok(base.with_vertices(v)?)
}

/// One cardiac cycle of `n` frames of `base` under `motion`.
pub fn animate(base: &SurfaceMesh, motion: &MotionModel, n: usize) -> Result<(MeshVideo, EfRecord), ShapeError> {
    if n < 2 {
        return Err(ShapeError::TooFewFrames(n));
    }
    motion.validate()?;
    let frames = (0..n).map(|t| motion_frame(base, motion, t as f64, n)).collect::<Result<Vec<_>, _>>()?;
    let ef = base.structures().into_iter().filter(|s| s.is_chamber()).map(|s| (s, motion.analytic_ef(s, n))).collect();
    Ok((MeshVideo::new(frames)?, ef))
}

pub fn generate_mesh_video(
    model: &ShapeModel,
    coefficients: &[f64],
    motion: &MotionModel,
    n: usize,
) -> Result<(MeshVideo, EfRecord), ShapeError> {
    animate(&sample_shape(model, coefficients)?, motion, n)
}
