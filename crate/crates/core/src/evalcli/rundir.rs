//! Files of a run directory. Every file is written to `<name>.partial` and
//! renamed when complete, so an interrupted stage leaves marked leftovers
//! rather than truncated outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::pipeline::Cohort;
use super::{EvalError, EvalReport, RunConfig};
use crate::dataset::{read_cine, write_cine, DatasetManifest};
use crate::diffcore::Checkpoint;
use crate::geometry::io::{load_mesh, mesh_to_text, sidecar_path};
use crate::geometry::{MeshVideo, SurfaceMesh};
use crate::imageae::ViewSelection;

pub const CONFIG: &str = "config.toml";
pub const MANIFEST: &str = "data/manifest.json";
pub const TEMPLATE: &str = "data/template.obj";
pub const EVAL_REPORT: &str = "eval/report.json";

pub fn view_slug(v: ViewSelection) -> &'static str {
    match v {
        ViewSelection::Lax => "lax",
        ViewSelection::LaxSax => "lax-sax",
    }
}

pub fn image_ae_model(v: ViewSelection) -> String {
    format!("models/image_ae_{}.ckpt", view_slug(v))
}

pub fn mapping_model(v: ViewSelection) -> String {
    format!("models/mapping_{}.ckpt", view_slug(v))
}

pub const MESH_AE_MODEL: &str = "models/mesh_ae.ckpt";
pub const EF_MODEL: &str = "models/ef_predictor.ckpt";

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Writes `rel` via a `.partial` sibling and an atomic rename.
    pub fn write(&self, rel: &str, bytes: &[u8]) -> Result<(), EvalError> {
        write_atomic(&self.path(rel), bytes)
    }

    fn require(&self, rel: &str, what: &str) -> Result<PathBuf, EvalError> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(EvalError::Missing { what: what.into(), path: p.display().to_string() })
        }
    }

    pub fn save_config(&self, cfg: &RunConfig) -> Result<(), EvalError> {
        self.write(CONFIG, cfg.to_toml().as_bytes())
    }

    pub fn load_config(&self) -> Result<RunConfig, EvalError> {
        RunConfig::load(&self.require(CONFIG, "run configuration")?)
    }

    pub fn save_checkpoint(&self, rel: &str, ck: &Checkpoint) -> Result<(), EvalError> {
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes)?;
        self.write(rel, &bytes)
    }

    pub fn load_checkpoint(&self, rel: &str, what: &str) -> Result<Checkpoint, EvalError> {
        Ok(Checkpoint::load(&self.require(rel, what)?)?)
    }

    pub fn save_mesh(&self, rel: &str, mesh: &SurfaceMesh) -> Result<(), EvalError> {
        let (text, header) = mesh_to_text(mesh);
        let p = self.path(rel);
        write_atomic(&p, text.as_bytes())?;
        write_atomic(&sidecar_path(&p), serde_json::to_string_pretty(&header).expect("header serializes").as_bytes())
    }

    pub fn load_mesh(&self, rel: &str, what: &str) -> Result<SurfaceMesh, EvalError> {
        Ok(load_mesh(&self.require(rel, what)?)?)
    }

    pub fn save_video(&self, rels: &[String], video: &MeshVideo) -> Result<(), EvalError> {
        for (rel, m) in rels.iter().zip(video.frames()) {
            self.save_mesh(rel, m)?;
        }
        Ok(())
    }

    pub fn load_video(&self, rels: &[String]) -> Result<MeshVideo, EvalError> {
        let frames = rels.iter().map(|r| self.load_mesh(r, "mesh frame")).collect::<Result<Vec<_>, _>>()?;
        Ok(MeshVideo::new(frames)?)
    }

    pub fn save_cohort(&self, c: &Cohort) -> Result<(), EvalError> {
        self.save_mesh(TEMPLATE, &c.template)?;
        for rec in &c.manifest.samples {
            if let (Some(rel), Some(cine)) = (&rec.cine_path, c.cines.get(&rec.id)) {
                let p = self.path(rel);
                let tmp = partial(&p);
                mkdirs(&p)?;
                write_cine(cine, &tmp)?;
                fs::rename(&tmp, &p).map_err(|e| EvalError::io(&p, e))?;
            }
            if let Some(v) = c.videos.get(&rec.id) {
                self.save_video(&rec.mesh_paths, v)?;
            }
        }
        // last, so a manifest implies complete data
        let json = serde_json::to_string_pretty(&c.manifest).expect("manifest serializes");
        self.write(MANIFEST, json.as_bytes())
    }

    pub fn load_cohort(&self) -> Result<Cohort, EvalError> {
        let mp = self.require(MANIFEST, "dataset manifest (run `synth` first)")?;
        let text = fs::read_to_string(&mp).map_err(|e| EvalError::io(&mp, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| EvalError::Input(format!("{}: {e}", mp.display())))?;
        let template = self.load_mesh(TEMPLATE, "mesh template")?;
        let mut videos = BTreeMap::new();
        let mut cines = BTreeMap::new();
        for rec in &manifest.samples {
            if let Some(rel) = &rec.cine_path {
                let p = self.require(rel, "cine")?;
                cines.insert(rec.id, read_cine(&p, manifest.mm_per_px)?);
            }
            if !rec.mesh_paths.is_empty() {
                videos.insert(rec.id, self.load_video(&rec.mesh_paths)?);
            }
        }
        Ok(Cohort { manifest, template, videos, cines })
    }

    pub fn save_report(&self, r: &EvalReport) -> Result<(), EvalError> {
        self.write(EVAL_REPORT, serde_json::to_string_pretty(r).expect("report serializes").as_bytes())
    }

    pub fn load_report(&self) -> Result<EvalReport, EvalError> {
        let p = self.require(EVAL_REPORT, "evaluation report (run `eval` first)")?;
        let text = fs::read_to_string(&p).map_err(|e| EvalError::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| EvalError::Input(format!("{}: {e}", p.display())))
    }
}

fn partial(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

fn mkdirs(p: &Path) -> Result<(), EvalError> {
    if let Some(d) = p.parent() {
        fs::create_dir_all(d).map_err(|e| EvalError::io(d, e))?;
    }
    Ok(())
}

pub fn write_atomic(p: &Path, bytes: &[u8]) -> Result<(), EvalError> {
    mkdirs(p)?;
    let tmp = partial(p);
    fs::write(&tmp, bytes).map_err(|e| EvalError::io(&tmp, e))?;
    fs::rename(&tmp, p).map_err(|e| EvalError::io(p, e))
}
