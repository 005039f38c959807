//! In-memory stages of an experiment. The command-line tool runs them one at
//! a time through files under a run directory; tests chain them directly.

use std::collections::BTreeMap;

use super::{evaluate_view, report, EvalError, EvalReport, EvalSample, RunConfig, ViewEval};
use crate::dataset::{make_unpaired_pools, render_cine, CineSequence, DatasetManifest, SampleRecord, Split};
use crate::geometry::{MeshVideo, Structure, SurfaceMesh};
use crate::imageae::{train_image_ae, ImageAe, TrainReport, ViewSelection};
use crate::mapping::{
    decoded_neighbors, infer_mesh_video, train_ef_predictor, train_mapping, EfPredictor, EfReport, LabeledCodes, Mapping, MappingData,
    MappingReport,
};
use crate::meshae::{train_mesh_ae, MeshAe};
use crate::shapemodel::{default_shape_model, generate_cohort, CohortConfig};

/// Splits whose subjects keep mesh videos: the mesh pools, plus held-out
/// image subjects as evaluation ground truth.
pub const MESH_SPLITS: [Split; 4] = [Split::MeshTrain, Split::MeshVal, Split::ImageVal, Split::ImageTest];
pub const IMAGE_SPLITS: [Split; 3] = [Split::ImageTrain, Split::ImageVal, Split::ImageTest];

pub fn cine_path(id: usize) -> String {
    format!("data/cine/{id:04}.cdim")
}

pub fn mesh_path(id: usize, t: usize) -> String {
    format!("data/mesh/{id:04}/frame_{t:02}.obj")
}

/// A synthesized cohort: manifest, mesh template, and the videos and cines
/// each split is allowed to see.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub manifest: DatasetManifest,
    pub template: SurfaceMesh,
    pub videos: BTreeMap<usize, MeshVideo>,
    pub cines: BTreeMap<usize, CineSequence>,
}

impl Cohort {
    pub fn ids(&self, split: Split) -> &[usize] {
        self.manifest.pools.ids(split)
    }

    pub fn ef(&self, id: usize, structures: &[Structure]) -> Result<Vec<f64>, EvalError> {
        let rec = self
            .manifest
            .samples
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| EvalError::Input(format!("subject {id} is not in the manifest")))?;
        structures
            .iter()
            .map(|s| rec.ef.get(s).copied().ok_or_else(|| EvalError::Input(format!("subject {id} has no {s} EF"))))
            .collect()
    }

    pub fn video(&self, id: usize) -> Result<&MeshVideo, EvalError> {
        self.videos.get(&id).ok_or_else(|| EvalError::Input(format!("subject {id} has no mesh video")))
    }

    pub fn cine(&self, id: usize) -> Result<&CineSequence, EvalError> {
        self.cines.get(&id).ok_or_else(|| EvalError::Input(format!("subject {id} has no cine")))
    }

    fn videos_of(&self, split: Split) -> Result<Vec<MeshVideo>, EvalError> {
        self.ids(split).iter().map(|&id| self.video(id).cloned()).collect()
    }

    fn cines_of(&self, split: Split) -> Result<Vec<CineSequence>, EvalError> {
        self.ids(split).iter().map(|&id| self.cine(id).cloned()).collect()
    }

    /// Held-out image subjects with their ground truth.
    pub fn eval_samples(&self, split: Split) -> Result<Vec<EvalSample>, EvalError> {
        self.ids(split)
            .iter()
            .map(|&id| Ok(EvalSample { id, gt: self.video(id)?.clone(), gt_ef: self.ef(id, &[Structure::LV])?[0] }))
            .collect()
    }
}

/// Shape model, cohort, unpaired pools and rendered cines.
pub fn synthesize(cfg: &RunConfig) -> Result<Cohort, EvalError> {
    cfg.validate()?;
    let c = &cfg.cohort;
    let model = default_shape_model(c.detail, c.modes, c.ssm_subjects, cfg.seed)?;
    let pool_cfg = c.pools();
    let samples = generate_cohort(
        &model,
        &CohortConfig { count: pool_cfg.total(), frames: c.frames, seed: cfg.seed, motion: c.motion.clone() },
    )?;
    let pools = make_unpaired_pools(samples.len(), &pool_cfg, cfg.seed)?;
    let mut videos = BTreeMap::new();
    let mut cines = BTreeMap::new();
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let split = pools.split_of(s.id).expect("every subject has a pool");
        let mut rec =
            SampleRecord { id: s.id, split, cine_path: None, norm: None, mesh_paths: Vec::new(), ef: s.ef.clone() };
        if IMAGE_SPLITS.contains(&split) {
            let cine = render_cine(&s.video, &cfg.render, s.seed)?;
            rec.cine_path = Some(cine_path(s.id));
            rec.norm = Some(cine.stats);
            cines.insert(s.id, cine);
        }
        if MESH_SPLITS.contains(&split) {
            rec.mesh_paths = (0..s.video.len()).map(|t| mesh_path(s.id, t)).collect();
            videos.insert(s.id, s.video);
        }
        records.push(rec);
    }
    let manifest = DatasetManifest {
        seed: cfg.seed,
        frames: c.frames,
        image_size: cfg.render.size,
        mm_per_px: cfg.render.mm_per_px(),
        pools,
        samples: records,
    };
    Ok(Cohort { manifest, template: model.mean, videos, cines })
}

pub fn train_image_stage(cfg: &RunConfig, cohort: &Cohort, view: ViewSelection) -> Result<(ImageAe, TrainReport), EvalError> {
    let pool = cohort.cines_of(Split::ImageTrain)?;
    let model = cfg.image_ae.model(cfg.render.size, view);
    Ok(train_image_ae(&pool, &model, &cfg.image_ae.fit())?)
}

pub fn train_mesh_stage(cfg: &RunConfig, cohort: &Cohort) -> Result<(MeshAe, TrainReport), EvalError> {
    let pool = cohort.videos_of(Split::MeshTrain)?;
    Ok(train_mesh_ae(&pool, &cohort.template, &cfg.mesh_ae.model, &cfg.mesh_ae.fit())?)
}

/// Mesh codes of a mesh split, labeled with the configured EF structures.
pub fn mesh_codes(cfg: &RunConfig, cohort: &Cohort, mesh_ae: &MeshAe, split: Split) -> Result<LabeledCodes, EvalError> {
    let mut out = LabeledCodes { codes: Vec::new(), ef: Vec::new() };
    for &id in cohort.ids(split) {
        out.codes.push(mesh_ae.encode(cohort.video(id)?)?.to_vector());
        out.ef.push(cohort.ef(id, &cfg.ef.structures)?);
    }
    Ok(out)
}

pub fn image_codes(cfg: &RunConfig, cohort: &Cohort, image_ae: &ImageAe, split: Split) -> Result<LabeledCodes, EvalError> {
    let mut out = LabeledCodes { codes: Vec::new(), ef: Vec::new() };
    for &id in cohort.ids(split) {
        out.codes.push(image_ae.encode(cohort.cine(id)?)?.to_vector());
        out.ef.push(cohort.ef(id, &cfg.ef.structures)?);
    }
    Ok(out)
}

pub fn train_ef_stage(cfg: &RunConfig, cohort: &Cohort, mesh_ae: &MeshAe) -> Result<(EfPredictor, EfReport), EvalError> {
    let mut train = mesh_codes(cfg, cohort, mesh_ae, Split::MeshTrain)?;
    let extra = decoded_neighbors(&train, mesh_ae, cfg.cohort.frames, &cfg.ef)?;
    train.codes.extend(extra.codes);
    train.ef.extend(extra.ef);
    let val = mesh_codes(cfg, cohort, mesh_ae, Split::MeshVal)?;
    Ok(train_ef_predictor(&train, &val, &cfg.ef)?)
}

pub fn train_mapping_stage(
    cfg: &RunConfig,
    cohort: &Cohort,
    image_ae: &ImageAe,
    mesh_ae: &MeshAe,
    ef: &EfPredictor,
) -> Result<(Mapping, MappingReport), EvalError> {
    let data = MappingData {
        image_train: image_codes(cfg, cohort, image_ae, Split::ImageTrain)?,
        mesh_train: mesh_codes(cfg, cohort, mesh_ae, Split::MeshTrain)?,
        image_val: image_codes(cfg, cohort, image_ae, Split::ImageVal)?,
        mesh_val: mesh_codes(cfg, cohort, mesh_ae, Split::MeshVal)?,
    };
    Ok(train_mapping(&data, ef, &cfg.mapping)?)
}

/// Predicted mesh videos for every image-test subject.
pub fn infer_stage(
    cfg: &RunConfig,
    cohort: &Cohort,
    image_ae: &ImageAe,
    mapping: &Mapping,
    mesh_ae: &MeshAe,
) -> Result<BTreeMap<usize, MeshVideo>, EvalError> {
    cohort
        .ids(Split::ImageTest)
        .iter()
        .map(|&id| Ok((id, infer_mesh_video(cohort.cine(id)?, image_ae, mapping, mesh_ae, cfg.eval.n_out)?)))
        .collect()
}

/// Scores one view configuration on the image-test subjects.
pub fn evaluate_stage(
    cfg: &RunConfig,
    cohort: &Cohort,
    view: ViewSelection,
    image_ae: &ImageAe,
    mapping: &Mapping,
    mesh_ae: &MeshAe,
) -> Result<ViewEval, EvalError> {
    let samples = cohort.eval_samples(Split::ImageTest)?;
    Ok(evaluate_view(
        view.name(),
        &samples,
        |s| Ok(infer_mesh_video(cohort.cine(s.id)?, image_ae, mapping, mesh_ae, cfg.eval.n_out)?),
        cfg,
    ))
}

/// Trained networks of one view configuration.
#[derive(Debug, Clone)]
pub struct ViewModels {
    pub view: ViewSelection,
    pub image_ae: ImageAe,
    pub image_report: TrainReport,
    pub mapping: Mapping,
    pub mapping_report: MappingReport,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub cohort: Cohort,
    pub mesh_ae: MeshAe,
    pub mesh_report: TrainReport,
    pub ef: EfPredictor,
    pub ef_report: EfReport,
    pub views: Vec<ViewModels>,
    pub report: EvalReport,
}

/// Every stage in order, without touching the filesystem.
pub fn run_experiment(cfg: &RunConfig) -> Result<Experiment, EvalError> {
    let cohort = synthesize(cfg)?;
    let (mesh_ae, mesh_report) = train_mesh_stage(cfg, &cohort)?;
    let (ef, ef_report) = train_ef_stage(cfg, &cohort, &mesh_ae)?;
    let mut views = Vec::new();
    let mut evals = Vec::new();
    for &view in &cfg.views {
        let (image_ae, image_report) = train_image_stage(cfg, &cohort, view)?;
        let (mapping, mapping_report) = train_mapping_stage(cfg, &cohort, &image_ae, &mesh_ae, &ef)?;
        evals.push(evaluate_stage(cfg, &cohort, view, &image_ae, &mapping, &mesh_ae)?);
        views.push(ViewModels { view, image_ae, image_report, mapping, mapping_report });
    }
    let report = report(evals, cfg);
    Ok(Experiment { cohort, mesh_ae, mesh_report, ef, ef_report, views, report })
}
