use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ef::{EfPredictor, LabeledCodes};
use super::losses::{adversarial_losses, cycle_loss, ef_loss, generator_objective};
use super::nets::{init_mlp, BoundNetworks, Standardizer};
use super::MappingError;
use crate::diffcore::{adam_step, AdamConfig, Checkpoint, DiffError, Graph, OptimizerState, ParamSet, Tensor, Var};
use crate::imageae::TrajectoryCode;

pub const MAPPING_CHECKPOINT_KIND: &str = "mapping";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weights of the mesh adversarial, image adversarial, cycle and EF terms.
    pub beta: [f64; 4],
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: [1.0, 1.0, 10.0, 10.0],
            lr_generator: 5e-4,
            lr_discriminator: 5e-4,
            batch_size: 16,
            max_epochs: 200,
            patience: 10,
            width: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MappingError> {
        if self.beta.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(MappingError::Config(format!("loss weights must be non-negative, got {:?}", self.beta)));
        }
        if self.patience < 1 {
            return Err(MappingError::Config("patience must be at least 1".into()));
        }
        if self.batch_size < 1 || self.width < 1 {
            return Err(MappingError::Config("batch size and width must be positive".into()));
        }
        if !(self.lr_generator > 0.0 && self.lr_discriminator > 0.0) {
            return Err(MappingError::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Generators and discriminators between standardized image and mesh codes.
#[derive(Debug, Clone, PartialEq)]
pub struct Mapping {
    pub width: usize,
    pub image_stats: Standardizer,
    pub mesh_stats: Standardizer,
    pub params: ParamSet,
}

impl Mapping {
    pub fn new(image_stats: Standardizer, mesh_stats: Standardizer, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (di, dm) = (image_stats.dim(), mesh_stats.dim());
        let mut params = ParamSet::new();
        init_mlp(&mut params, "gen.m", di, width, dm, &mut rng);
        init_mlp(&mut params, "gen.i", dm, width, di, &mut rng);
        init_mlp(&mut params, "disc.m", dm, width, 1, &mut rng);
        init_mlp(&mut params, "disc.i", di, width, 1, &mut rng);
        Mapping { width, image_stats, mesh_stats, params }
    }

    /// `G_M` on an image trajectory code.
    pub fn to_mesh(&self, code: &TrajectoryCode) -> Result<TrajectoryCode, MappingError> {
        let x = self.image_stats.apply(&code.to_vector());
        let y = self.run("gen.m", &x)?;
        Ok(TrajectoryCode::from_vector(&self.mesh_stats.invert(&y)))
    }

    /// `G_I` on a mesh trajectory code.
    pub fn to_image(&self, code: &TrajectoryCode) -> Result<TrajectoryCode, MappingError> {
        let x = self.mesh_stats.apply(&code.to_vector());
        let y = self.run("gen.i", &x)?;
        Ok(TrajectoryCode::from_vector(&self.image_stats.invert(&y)))
    }

    fn run(&self, net: &str, x: &[f64]) -> Result<Vec<f64>, MappingError> {
        let mut g = Graph::new();
        let p = g.bind(&self.params, false)?;
        let x = g.input(Tensor::row(x))?;
        let y = super::nets::mlp(&mut g, &p, net, x, super::nets::Head::Linear)?;
        Ok(g.value(y).data().to_vec())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(MAPPING_CHECKPOINT_KIND, self.params.clone())
            .with_hyper("width", self.width)
            .with_hyper("image_stats", &self.image_stats)
            .with_hyper("mesh_stats", &self.mesh_stats)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, MappingError> {
        if ck.kind != MAPPING_CHECKPOINT_KIND {
            return Err(MappingError::Input(format!(
                "checkpoint holds `{}`, expected `{MAPPING_CHECKPOINT_KIND}`",
                ck.kind
            )));
        }
        let m = Mapping {
            width: ck.hyper("width")?,
            image_stats: ck.hyper("image_stats")?,
            mesh_stats: ck.hyper("mesh_stats")?,
            params: ck.params.clone(),
        };
        let fresh = Mapping::new(m.image_stats.clone(), m.mesh_stats.clone(), m.width, 0);
        for (name, t) in fresh.params.iter() {
            if m.params.get(name)?.shape() != t.shape() {
                return Err(MappingError::Input(format!("tensor `{name}` has the wrong shape")));
            }
        }
        Ok(m)
    }
}

/// Unpaired training and validation codes with EF labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingData {
    pub image_train: LabeledCodes,
    pub mesh_train: LabeledCodes,
    pub image_val: LabeledCodes,
    pub mesh_val: LabeledCodes,
}

/// One row of the training log; epoch 0 is measured before any update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub disc: f64,
    pub adv_m: f64,
    pub adv_i: f64,
    pub cycle: f64,
    pub ef: f64,
    pub val_ef: f64,
    pub val_cycle: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,disc,adv_m,adv_i,cycle,ef,val_ef,val_cycle";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, self.disc, self.adv_m, self.adv_i, self.cycle, self.ef, self.val_ef, self.val_cycle
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl MappingReport {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch]
    }
}

struct Batch {
    xi: Tensor,
    efi: Tensor,
    xm: Tensor,
    efm: Tensor,
}

fn stack(stats: &Standardizer, data: &LabeledCodes, idx: &[usize]) -> (Tensor, Tensor) {
    let d = stats.dim();
    let k = data.ef[0].len();
    let x = idx.iter().flat_map(|&i| stats.apply(&data.codes[i])).collect();
    let y = idx.iter().flat_map(|&i| data.ef[i].iter().copied()).collect();
    (
        Tensor::new(vec![idx.len(), d], x).expect("code batch"),
        Tensor::new(vec![idx.len(), k], y).expect("label batch"),
    )
}

fn full_batch(mapping: &Mapping, image: &LabeledCodes, mesh: &LabeledCodes) -> Batch {
    let (xi, efi) = stack(&mapping.image_stats, image, &(0..image.len()).collect::<Vec<_>>());
    let (xm, efm) = stack(&mapping.mesh_stats, mesh, &(0..mesh.len()).collect::<Vec<_>>());
    Batch { xi, efi, xm, efm }
}

fn finite(v: f64, component: &'static str, epoch: usize) -> Result<f64, MappingError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MappingError::NonFinite { component, epoch })
    }
}

/// `[disc, adv_m, adv_i, cycle, ef]` on one batch without updates.
fn measure(params: &ParamSet, ef: &EfPredictor, b: &Batch) -> Result<[f64; 5], DiffError> {
    let mut g = Graph::new();
    let mp = g.bind(params, false)?;
    let ep = g.bind(&ef.params, false)?;
    let nets = BoundNetworks { mapping: &mp, ef: &ep };
    let (xi, xm) = (g.input(b.xi.clone())?, g.input(b.xm.clone())?);
    let adv = adversarial_losses(&mut g, &nets, xi, xm)?;
    let cyc = cycle_loss(&mut g, &nets, xi, xm)?;
    let efl = ef_loss(&mut g, &nets, xi, &b.efi, xm, &b.efm)?;
    let v = |x: Var| g.value(x).item();
    Ok([v(adv.disc_m) + v(adv.disc_i), v(adv.gen_m), v(adv.gen_i), v(cyc), v(efl)])
}

/// Alternating discriminator and generator Adam updates on minibatches,
/// with early stopping on the validation EF loss. `ef` is frozen; the
/// returned mapping holds the parameters of the best validation epoch.
pub fn train_mapping(data: &MappingData, ef: &EfPredictor, cfg: &TrainConfig) -> Result<(Mapping, MappingReport), MappingError> {
    cfg.validate()?;
    for (name, set) in [
        ("image training codes", &data.image_train),
        ("mesh training codes", &data.mesh_train),
        ("image validation codes", &data.image_val),
        ("mesh validation codes", &data.mesh_val),
    ] {
        if set.is_empty() {
            return Err(MappingError::EmptyPool(name));
        }
    }
    let image_stats = Standardizer::fit(&data.image_train.codes);
    let mut mapping = Mapping::new(image_stats, ef.stats.clone(), cfg.width, cfg.seed);
    let train_all = full_batch(&mapping, &data.image_train, &data.mesh_train);
    let val = full_batch(&mapping, &data.image_val, &data.mesh_val);

    let record = |epoch: usize, params: &ParamSet, train: Option<[f64; 5]>| -> Result<EpochRecord, MappingError> {
        let t = match train {
            Some(t) => t,
            None => measure(params, ef, &train_all)?,
        };
        let v = measure(params, ef, &val)?;
        let names = ["disc", "adv_m", "adv_i", "cycle", "ef"];
        for (x, n) in t.iter().zip(names) {
            finite(*x, n, epoch)?;
        }
        Ok(EpochRecord {
            epoch,
            disc: t[0],
            adv_m: t[1],
            adv_i: t[2],
            cycle: t[3],
            ef: t[4],
            val_ef: finite(v[4], "val_ef", epoch)?,
            val_cycle: finite(v[3], "val_cycle", epoch)?,
        })
    };

    let mut history = vec![record(0, &mapping.params, None)?];
    let mut best = (history[0].val_ef, mapping.params.clone(), 0usize);
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d61_7070);
    let mut d_state = OptimizerState::new();
    let mut g_state = OptimizerState::new();
    let d_adam = AdamConfig::with_lr(cfg.lr_discriminator);
    let g_adam = AdamConfig::with_lr(cfg.lr_generator);
    let mut order_i: Vec<usize> = (0..data.image_train.len()).collect();
    let mut order_m: Vec<usize> = (0..data.mesh_train.len()).collect();
    let bs = cfg.batch_size;

    for epoch in 1..=cfg.max_epochs {
        order_i.shuffle(&mut rng);
        order_m.shuffle(&mut rng);
        let batches = order_i.len().div_ceil(bs);
        let mut sums = [0.0; 5];
        for b in 0..batches {
            let idx_i = &order_i[b * bs..((b + 1) * bs).min(order_i.len())];
            let idx_m: Vec<usize> = (0..idx_i.len()).map(|k| order_m[(b * bs + k) % order_m.len()]).collect();
            let (xi, efi) = stack(&mapping.image_stats, &data.image_train, idx_i);
            let (xm, efm) = stack(&mapping.mesh_stats, &data.mesh_train, &idx_m);
            let wrap = |e: DiffError| MappingError::Training { epoch, source: e };

            // discriminator step
            let mut g = Graph::new();
            let mp = g.bind(&mapping.params, true).map_err(wrap)?;
            let ep = g.bind(&ef.params, false).map_err(wrap)?;
            let nets = BoundNetworks { mapping: &mp, ef: &ep };
            let (vi, vm) = (g.input(xi.clone()).map_err(wrap)?, g.input(xm.clone()).map_err(wrap)?);
            let adv = adversarial_losses(&mut g, &nets, vi, vm).map_err(wrap)?;
            let d_total = g.add(adv.disc_m, adv.disc_i).map_err(wrap)?;
            sums[0] += g.value(d_total).item();
            let mut grads = g.backward(d_total).map_err(wrap)?;
            grads.retain_prefix("disc.");
            adam_step(&mut mapping.params, &grads, &mut d_state, &d_adam).map_err(wrap)?;

            // generator step against the updated discriminators
            let mut g = Graph::new();
            let mp = g.bind(&mapping.params, true).map_err(wrap)?;
            let ep = g.bind(&ef.params, false).map_err(wrap)?;
            let nets = BoundNetworks { mapping: &mp, ef: &ep };
            let (vi, vm) = (g.input(xi).map_err(wrap)?, g.input(xm).map_err(wrap)?);
            let terms = generator_objective(&mut g, &nets, cfg.beta, vi, &efi, vm, &efm).map_err(wrap)?;
            sums[1] += g.value(terms.adv_m).item();
            sums[2] += g.value(terms.adv_i).item();
            sums[3] += g.value(terms.cycle).item();
            sums[4] += g.value(terms.ef).item();
            let mut grads = g.backward(terms.total).map_err(wrap)?;
            grads.retain_prefix("gen.");
            adam_step(&mut mapping.params, &grads, &mut g_state, &g_adam).map_err(wrap)?;
        }
        let means = sums.map(|s| s / batches as f64);
        let rec = record(epoch, &mapping.params, Some(means))?;
        if rec.val_ef < best.0 {
            best = (rec.val_ef, mapping.params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(rec);
        if since_best >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    mapping.params = best.1;
    Ok((mapping, MappingReport { history, best_epoch: best.2, stopped_early }))
}
