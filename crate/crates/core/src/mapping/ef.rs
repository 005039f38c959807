use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::nets::{init_mlp, mlp, Head, Standardizer};
use super::MappingError;
use crate::diffcore::{fit, Bound, Checkpoint, DiffError, FitConfig, Graph, ParamSet, Tensor, Var};
use crate::geometry::{ejection_fraction, volume_curve, Structure};
use crate::imageae::TrajectoryCode;
use crate::meshae::MeshAe;

pub const EF_CHECKPOINT_KIND: &str = "ef-predictor";

/// Code vectors with per-structure EF labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCodes {
    pub codes: Vec<Vec<f64>>,
    /// One row per code, one column per predicted structure.
    pub ef: Vec<Vec<f64>>,
}

impl LabeledCodes {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn labels(&self) -> Tensor {
        let k = self.ef.first().map_or(0, Vec::len);
        Tensor::new(vec![self.ef.len(), k], self.ef.concat()).expect("label rows of equal width")
    }

    fn validate(&self, structures: usize) -> Result<(), MappingError> {
        if self.codes.len() != self.ef.len() {
            return Err(MappingError::Input(format!("{} codes but {} label rows", self.codes.len(), self.ef.len())));
        }
        if let Some(r) = self.ef.iter().find(|r| r.len() != structures || r.iter().any(|v| !(0.0..=1.0).contains(v))) {
            return Err(MappingError::Input(format!("EF label row {r:?} is not {structures} values in [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EfConfig {
    pub structures: Vec<Structure>,
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Decoder-labeled neighbors added per training code (see [`decoded_neighbors`]).
    pub neighbors: usize,
    /// Neighbor offset scale, in standard deviations of each code entry.
    pub neighbor_sigma: f64,
}

impl Default for EfConfig {
    fn default() -> Self {
        EfConfig {
            structures: vec![Structure::LV],
            width: 64,
            epochs: 300,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
            neighbors: 5,
            neighbor_sigma: 0.25,
        }
    }
}

/// Gaussian perturbations of the training codes, each labeled with the EF of
/// the mesh video the decoder produces from it.
pub fn decoded_neighbors(
    train: &LabeledCodes,
    mesh_ae: &MeshAe,
    frames: usize,
    cfg: &EfConfig,
) -> Result<LabeledCodes, MappingError> {
    let mut out = LabeledCodes { codes: Vec::new(), ef: Vec::new() };
    if cfg.neighbors == 0 || train.is_empty() {
        return Ok(out);
    }
    let noise = Normal::new(0.0, cfg.neighbor_sigma)
        .map_err(|_| MappingError::Config(format!("neighbor sigma {} is not a valid deviation", cfg.neighbor_sigma)))?;
    let stats = Standardizer::fit(&train.codes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e65_6967);
    for code in &train.codes {
        let z = stats.apply(code);
        for _ in 0..cfg.neighbors {
            let v = stats.invert(&z.iter().map(|x| x + noise.sample(&mut rng)).collect::<Vec<_>>());
            let video = mesh_ae.decode_video(&TrajectoryCode::from_vector(&v), frames)?;
            // a decoded chamber can fold flat; such neighbors carry no label
            let labels: Option<Vec<f64>> = cfg
                .structures
                .iter()
                .map(|&s| {
                    let curve = volume_curve(&video, s).ok()?;
                    Some(ejection_fraction(&curve).ok()?.ef.clamp(0.0, 1.0))
                })
                .collect();
            if let Some(ef) = labels {
                out.codes.push(v);
                out.ef.push(ef);
            }
        }
    }
    Ok(out)
}

/// Dense regressor from a standardized mesh code to EF fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct EfPredictor {
    pub structures: Vec<Structure>,
    pub width: usize,
    /// Standardization of the mesh codes it was trained on.
    pub stats: Standardizer,
    pub params: ParamSet,
}

impl EfPredictor {
    pub fn new(structures: Vec<Structure>, width: usize, stats: Standardizer, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        init_mlp(&mut params, "ef", stats.dim(), width, structures.len(), &mut rng);
        EfPredictor { structures, width, stats, params }
    }

    /// `x`: standardized codes `[B, d + 1]`.
    pub fn forward(g: &mut Graph, p: &Bound, x: Var) -> Result<Var, DiffError> {
        mlp(g, p, "ef", x, Head::Sigmoid)
    }

    pub fn predict(&self, code: &TrajectoryCode) -> Result<Vec<f64>, MappingError> {
        self.predict_vector(&code.to_vector())
    }

    /// Prediction for a raw `(r, cos θ0, sin θ0, s)` vector.
    pub fn predict_vector(&self, v: &[f64]) -> Result<Vec<f64>, MappingError> {
        let x = self.stats.apply(v);
        let mut g = Graph::new();
        let p = g.bind(&self.params, false)?;
        let x = g.input(Tensor::row(&x))?;
        let y = Self::forward(&mut g, &p, x)?;
        Ok(g.value(y).data().to_vec())
    }

    /// Mean absolute error over every structure and sample.
    pub fn mae(&self, data: &LabeledCodes) -> Result<f64, MappingError> {
        let mut total = 0.0;
        for (c, ef) in data.codes.iter().zip(&data.ef) {
            let pred = self.predict_vector(c)?;
            total += pred.iter().zip(ef).map(|(a, b)| (a - b).abs()).sum::<f64>() / ef.len() as f64;
        }
        Ok(total / data.len().max(1) as f64)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(EF_CHECKPOINT_KIND, self.params.clone())
            .with_hyper("structures", &self.structures)
            .with_hyper("width", self.width)
            .with_hyper("stats", &self.stats)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, MappingError> {
        if ck.kind != EF_CHECKPOINT_KIND {
            return Err(MappingError::Input(format!("checkpoint holds `{}`, expected `{EF_CHECKPOINT_KIND}`", ck.kind)));
        }
        let ef = EfPredictor {
            structures: ck.hyper("structures")?,
            width: ck.hyper("width")?,
            stats: ck.hyper("stats")?,
            params: ck.params.clone(),
        };
        let fresh = EfPredictor::new(ef.structures.clone(), ef.width, ef.stats.clone(), 0);
        for (name, t) in fresh.params.iter() {
            if ef.params.get(name)?.shape() != t.shape() {
                return Err(MappingError::Input(format!("tensor `{name}` has the wrong shape")));
            }
        }
        Ok(ef)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfReport {
    /// Mean training L1 per epoch.
    pub history: Vec<f64>,
    pub val_mae: f64,
}

/// Supervised L1 regression from mesh codes to EF.
pub fn train_ef_predictor(
    train: &LabeledCodes,
    val: &LabeledCodes,
    cfg: &EfConfig,
) -> Result<(EfPredictor, EfReport), MappingError> {
    if train.is_empty() {
        return Err(MappingError::EmptyPool("EF training set"));
    }
    train.validate(cfg.structures.len())?;
    val.validate(cfg.structures.len())?;
    let stats = Standardizer::fit(&train.codes);
    let mut ef = EfPredictor::new(cfg.structures.clone(), cfg.width, stats, cfg.seed);
    let xs: Vec<Tensor> = train.codes.iter().map(|c| Tensor::row(&ef.stats.apply(c))).collect();
    let ys: Vec<Tensor> = train.ef.iter().map(|r| Tensor::row(r)).collect();
    let fit_cfg = FitConfig { epochs: cfg.epochs, batch_size: cfg.batch_size, lr: cfg.lr, seed: cfg.seed };
    let history = fit(&mut ef.params, train.len(), &fit_cfg, |g, p, i| {
        let x = g.input(xs[i].clone())?;
        let y = EfPredictor::forward(g, p, x)?;
        let t = g.constant(ys[i].clone())?;
        g.l1(y, t)
    })?;
    let val_mae = if val.is_empty() { f64::NAN } else { ef.mae(val)? };
    Ok((ef, EfReport { history, val_mae }))
}
