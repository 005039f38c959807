use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::motion::animate;
use super::{sample_shape, EfRecord, MotionBounds, MotionModel, ShapeError, ShapeModel};
use crate::geometry::MeshVideo;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortConfig {
    pub count: usize,
    pub frames: usize,
    pub seed: u64,
    #[serde(default)]
    pub motion: MotionBounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSample {
    pub id: usize,
    pub seed: u64,
    pub coefficients: Vec<f64>,
    pub motion: MotionModel,
    pub video: MeshVideo,
    pub ef: EfRecord,
}

fn truncated_normal<R: Rng>(rng: &mut R, limit: f64) -> f64 {
    loop {
        let x: f64 = rng.sample(StandardNormal);
        if x.abs() <= limit {
            return x;
        }
    }
}

/// Shape coefficients standard-normal truncated to ±3, motion uniform within
/// the configured bounds. Each sample draws from its own seed so any sample
/// can be regenerated alone.
pub fn generate_cohort(model: &ShapeModel, config: &CohortConfig) -> Result<Vec<CohortSample>, ShapeError> {
    if config.count == 0 {
        return Err(ShapeError::EmptyCohort);
    }
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds: Vec<u64> = (0..config.count).map(|_| master.gen()).collect();
    seeds
        .into_iter()
        .enumerate()
        .map(|(id, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coefficients: Vec<f64> = (0..model.mode_count()).map(|_| truncated_normal(&mut rng, 3.0)).collect();
            let motion = config.motion.sample(&mut rng);
            let base = sample_shape(model, &coefficients)?;
            let (video, ef) = animate(&base, &motion, config.frames)?;
            Ok(CohortSample { id, seed, coefficients, motion, video, ef })
        })
        .collect()
}

/// Everything needed to regenerate or locate each sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub seed: u64,
    pub coefficients: Vec<f64>,
    pub motion: MotionModel,
    pub ef: EfRecord,
    #[serde(default)]
    pub paths: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub config: CohortConfig,
    pub entries: Vec<ManifestEntry>,
}

impl CohortManifest {
    pub fn from_samples(config: &CohortConfig, samples: &[CohortSample]) -> Self {
        CohortManifest {
            config: config.clone(),
            entries: samples
                .iter()
                .map(|s| ManifestEntry {
                    id: s.id,
                    seed: s.seed,
                    coefficients: s.coefficients.clone(),
                    motion: s.motion.clone(),
                    ef: s.ef.clone(),
                    paths: Vec::new(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ejection_fraction, volume_curve, Structure};
    use crate::shapemodel::default_shape_model;

    fn config(count: usize) -> CohortConfig {
        CohortConfig { count, frames: 16, seed: 7, motion: MotionBounds::default() }
    }

    #[test]
    fn reproducible() {
        let m = default_shape_model(1, 4, 10, 0).unwrap();
        let a = generate_cohort(&m, &config(10)).unwrap();
        let b = generate_cohort(&m, &config(10)).unwrap();
        assert_eq!(a, b);
        let ja = serde_json::to_string(&CohortManifest::from_samples(&config(10), &a)).unwrap();
        let jb = serde_json::to_string(&CohortManifest::from_samples(&config(10), &b)).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn ef_spread_and_consistency() {
        let m = default_shape_model(1, 8, 20, 0).unwrap();
        let c = generate_cohort(&m, &config(200)).unwrap();
        let lv: Vec<f64> = c.iter().map(|s| s.ef[&Structure::LV]).collect();
        let lo = lv.iter().copied().fold(1.0, f64::min);
        let hi = lv.iter().copied().fold(0.0, f64::max);
        assert!(lo <= 0.3 && hi >= 0.7, "{lo} {hi}");
        for s in c.iter().take(20) {
            assert_eq!(s.video.len(), 16);
            for st in Structure::CHAMBERS {
                let curve = volume_curve(&s.video, st).unwrap();
                assert!(curve.iter().all(|&v| v > 0.0));
                let measured = ejection_fraction(&curve).unwrap().ef;
                let truth = s.ef[&st];
                assert!((measured - truth).abs() <= 0.01 * truth.max(1e-12), "{st}: {measured} vs {truth}");
            }
        }
    }

    #[test]
    fn empty_rejected() {
        let m = default_shape_model(1, 2, 4, 0).unwrap();
        assert!(matches!(generate_cohort(&m, &config(0)), Err(ShapeError::EmptyCohort)));
    }
}
