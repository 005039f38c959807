use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataset::{PoolConfig, RenderConfig};
use crate::diffcore::FitConfig;
use crate::geometry::{AsdMode, IcpConfig, IcpInit};
use crate::imageae::{ImageAeConfig, ViewSelection};
use crate::mapping::{EfConfig, TrainConfig};
use crate::meshae::MeshAeConfig;
use crate::shapemodel::MotionBounds;

/// Synthetic cohort and shape model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSection {
    /// Image subjects; split into train/val/test, plus a disjoint mesh pool
    /// of the same train/val sizes.
    pub count: usize,
    pub frames: usize,
    /// Icosphere subdivisions per structure.
    pub detail: usize,
    pub ssm_subjects: usize,
    pub modes: usize,
    pub motion: MotionBounds,
}

impl Default for CohortSection {
    fn default() -> Self {
        CohortSection { count: 200, frames: 16, detail: 2, ssm_subjects: 20, modes: 8, motion: MotionBounds::default() }
    }
}

impl CohortSection {
    /// 70/15/15 image split; the mesh pool mirrors train and val.
    pub fn pools(&self) -> PoolConfig {
        let held = ((self.count as f64 * 0.15).round() as usize).max(1);
        let train = self.count.saturating_sub(2 * held);
        PoolConfig { image_train: train, image_val: held, image_test: held, mesh_train: train, mesh_val: held }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageAeSection {
    pub channels: [usize; 3],
    pub feature: usize,
    pub hidden: usize,
    pub latent: usize,
    pub kappa: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ImageAeSection {
    fn default() -> Self {
        let m = ImageAeConfig::default();
        ImageAeSection {
            channels: m.channels,
            feature: m.feature,
            hidden: m.hidden,
            latent: m.latent,
            kappa: m.kappa,
            epochs: 100,
            batch_size: 2,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl ImageAeSection {
    pub fn model(&self, size: usize, views: ViewSelection) -> ImageAeConfig {
        ImageAeConfig {
            size,
            views,
            channels: self.channels,
            feature: self.feature,
            hidden: self.hidden,
            latent: self.latent,
            kappa: self.kappa,
        }
    }

    pub fn fit(&self) -> FitConfig {
        FitConfig { epochs: self.epochs, batch_size: self.batch_size, lr: self.lr, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshAeSection {
    pub model: MeshAeConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MeshAeSection {
    fn default() -> Self {
        MeshAeSection { model: MeshAeConfig::default(), epochs: 60, batch_size: 8, lr: 3e-3, seed: 0 }
    }
}

impl MeshAeSection {
    pub fn fit(&self) -> FitConfig {
        FitConfig { epochs: self.epochs, batch_size: self.batch_size, lr: self.lr, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Frames decoded per predicted video.
    pub n_out: usize,
    pub asd_mode: AsdMode,
    /// Surface samples per structure when a mesh is the source of a
    /// directed distance (symmetric mode only).
    pub points_per_structure: usize,
    pub icp: IcpConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_out: 16,
            asd_mode: AsdMode::GtToMesh,
            points_per_structure: 2000,
            icp: IcpConfig { inits: vec![IcpInit::Identity, IcpInit::Centroid], ..IcpConfig::default() },
        }
    }
}

/// Every tunable of a run. Parsed from TOML; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Cohort, pool and rendering seed.
    pub seed: u64,
    /// View configurations trained and evaluated, one image autoencoder each.
    pub views: Vec<ViewSelection>,
    pub cohort: CohortSection,
    pub render: RenderConfig,
    pub image_ae: ImageAeSection,
    pub mesh_ae: MeshAeSection,
    pub ef: EfConfig,
    pub mapping: TrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            views: vec![ViewSelection::LaxSax, ViewSelection::Lax],
            cohort: CohortSection::default(),
            render: RenderConfig::default(),
            image_ae: ImageAeSection::default(),
            mesh_ae: MeshAeSection::default(),
            ef: EfConfig::default(),
            mapping: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, EvalError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| EvalError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            EvalError::Config(m) => EvalError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Config(m));
        if self.views.is_empty() {
            return bad("at least one view configuration is required".into());
        }
        let mut seen = self.views.clone();
        seen.sort_by_key(|v| v.name());
        seen.dedup();
        if seen.len() != self.views.len() {
            return bad("view configurations are listed twice".into());
        }
        if self.cohort.count < 4 {
            return bad(format!("cohort.count must be at least 4, got {}", self.cohort.count));
        }
        if self.cohort.frames < 2 || self.eval.n_out < 2 {
            return bad("cohort.frames and eval.n_out must be at least 2".into());
        }
        if self.render.size < 8 || self.render.size % 8 != 0 {
            return bad(format!("render.size must be a positive multiple of 8, got {}", self.render.size));
        }
        if self.cohort.modes + 1 > self.cohort.ssm_subjects {
            return bad(format!(
                "cohort.modes = {} needs at least {} SSM subjects",
                self.cohort.modes,
                self.cohort.modes + 1
            ));
        }
        if self.eval.icp.inits.is_empty() {
            return bad("eval.icp.inits is empty".into());
        }
        self.mapping.validate().map_err(|e| EvalError::Config(e.to_string()))
    }
}
