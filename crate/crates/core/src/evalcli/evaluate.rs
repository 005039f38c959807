use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{EvalSection, RunConfig};
use super::stats::{mean_std, pearson};
use super::EvalError;
use crate::dataset::{view_planes, RenderConfig};
use crate::geometry::{
    average_surface_distance, ejection_fraction, icp_align, slice_mesh, volume_curve, AsdMode, MeshVideo, Structure,
    Surface, SurfaceSampling, SurfaceTarget, Vec3,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    ED,
    ES,
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::ED, Phase::ES];

    pub fn name(self) -> &'static str {
        match self {
            Phase::ED => "ED",
            Phase::ES => "ES",
        }
    }
}

/// A held-out subject with its ground-truth mesh video and LV EF.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub id: usize,
    pub gt: MeshVideo,
    pub gt_ef: f64,
}

/// Per-subject result for one view configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: usize,
    pub gt_ef: f64,
    pub pred_ef: f64,
    /// ASD (mm) per phase and structure; structures the slices miss are absent.
    pub asd: BTreeMap<Phase, BTreeMap<Structure, f64>>,
    /// Predicted volumes (mL) per structure and frame.
    pub pred_volumes: BTreeMap<Structure, Vec<f64>>,
    pub gt_volumes: BTreeMap<Structure, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsdRow {
    pub phase: Phase,
    /// Structure name or `Avg`.
    pub structure: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub id: usize,
    pub message: String,
}

/// Results of one view configuration (`LAX` or `LAX+SAX`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEval {
    pub view: String,
    pub rows: Vec<AsdRow>,
    /// (ground truth, predicted) LV EF.
    pub ef_pairs: Vec<(f64, f64)>,
    pub pearson_r: Option<f64>,
    /// Why `pearson_r` is missing, if it is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pearson_note: Option<String>,
    pub samples: Vec<SampleResult>,
    pub failures: Vec<Failure>,
}

impl ViewEval {
    pub fn row(&self, phase: Phase, structure: &str) -> Option<&AsdRow> {
        self.rows.iter().find(|r| r.phase == phase && r.structure == structure)
    }

    /// Mean of the two `Avg` rows.
    pub fn mean_asd(&self) -> f64 {
        let avgs: Vec<f64> = Phase::ALL.iter().filter_map(|&p| self.row(p, "Avg")).map(|r| r.mean).collect();
        avgs.iter().sum::<f64>() / avgs.len() as f64
    }
}

pub const AVG_NOTE: &str =
    "Avg is the mean of the per-structure means; its std is over per-subject averages of the available structures";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub asd_mode: AsdMode,
    pub views: Vec<ViewEval>,
    pub notes: Vec<String>,
    pub config: RunConfig,
}

impl EvalReport {
    pub fn view(&self, name: &str) -> Option<&ViewEval> {
        self.views.iter().find(|v| v.view == name)
    }
}

fn curves(video: &MeshVideo) -> Result<BTreeMap<Structure, Vec<f64>>, EvalError> {
    Structure::REPORT_ORDER.iter().map(|&s| Ok((s, volume_curve(video, s)?))).collect()
}

/// Scores one predicted video against its ground truth.
///
/// Ground-truth contours come from slicing the GT ED/ES meshes with the
/// imaging planes. The contour points are rigidly aligned onto the predicted
/// surface of the matching phase (ED/ES taken from the predicted LV volume
/// curve), then each structure's points are scored against that structure.
pub fn evaluate_sample(
    sample: &EvalSample,
    predicted: &MeshVideo,
    render: &RenderConfig,
    eval: &EvalSection,
) -> Result<SampleResult, EvalError> {
    if !predicted.frame(0).same_topology(sample.gt.frame(0)) {
        return Err(EvalError::Input("predicted mesh topology differs from the ground truth".into()));
    }
    let gt_volumes = curves(&sample.gt)?;
    let pred_volumes = curves(predicted)?;
    let gt_ef = ejection_fraction(&gt_volumes[&Structure::LV])?;
    let pred_ef = ejection_fraction(&pred_volumes[&Structure::LV])?;
    let planes = view_planes(sample.gt.frame(0), render)?;
    let sampling = SurfaceSampling { points_per_structure: eval.points_per_structure, seed: sample.id as u64 };
    let mut asd = BTreeMap::new();
    for (phase, gt_frame, pred_frame) in
        [(Phase::ED, gt_ef.ed_frame, pred_ef.ed_frame), (Phase::ES, gt_ef.es_frame, pred_ef.es_frame)]
    {
        let gt_mesh = sample.gt.frame(gt_frame);
        let pred_mesh = predicted.frame(pred_frame);
        let mut points: BTreeMap<Structure, Vec<Vec3>> = BTreeMap::new();
        for (_, plane, _) in &planes.views {
            let set = slice_mesh(gt_mesh, plane)?;
            for s in set.structures() {
                points.entry(s).or_default().extend(set.points_3d(s));
            }
        }
        let all: Vec<Vec3> = points.values().flatten().copied().collect();
        let target = SurfaceTarget::new(pred_mesh, &Structure::ALL);
        let tf = icp_align(&all, &target, &eval.icp)?.transform;
        let mut per = BTreeMap::new();
        for (s, pts) in points {
            let moved: Vec<Vec3> = pts.iter().map(|p| tf.apply(p)).collect();
            let d = average_surface_distance(
                &Surface::Mesh { mesh: pred_mesh, structure: s },
                &Surface::Points(&moved),
                eval.asd_mode,
                &sampling,
            )?;
            per.insert(s, d);
        }
        asd.insert(phase, per);
    }
    Ok(SampleResult { id: sample.id, gt_ef: sample.gt_ef, pred_ef: pred_ef.ef, asd, pred_volumes, gt_volumes })
}

/// Aggregates per-subject results into table rows and the EF correlation.
pub fn summarize(view: &str, samples: Vec<SampleResult>, failures: Vec<Failure>) -> ViewEval {
    let mut rows = Vec::new();
    for phase in Phase::ALL {
        let mut means = Vec::new();
        for s in Structure::REPORT_ORDER {
            let v: Vec<f64> = samples.iter().filter_map(|r| r.asd.get(&phase)?.get(&s).copied()).collect();
            let (mean, std) = mean_std(&v);
            if !v.is_empty() {
                means.push(mean);
            }
            rows.push(AsdRow { phase, structure: s.name().into(), mean, std, n: v.len() });
        }
        let per_subject: Vec<f64> = samples
            .iter()
            .filter_map(|r| {
                let m = r.asd.get(&phase)?;
                (!m.is_empty()).then(|| m.values().sum::<f64>() / m.len() as f64)
            })
            .collect();
        let mean = if means.is_empty() { f64::NAN } else { means.iter().sum::<f64>() / means.len() as f64 };
        rows.push(AsdRow { phase, structure: "Avg".into(), mean, std: mean_std(&per_subject).1, n: per_subject.len() });
    }
    let ef_pairs: Vec<(f64, f64)> = samples.iter().map(|r| (r.gt_ef, r.pred_ef)).collect();
    let xs: Vec<f64> = ef_pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = ef_pairs.iter().map(|p| p.1).collect();
    let (pearson_r, pearson_note) = match pearson(&xs, &ys) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    ViewEval { view: view.into(), rows, ef_pairs, pearson_r, pearson_note, samples, failures }
}

/// Runs `predict` on every sample and scores it. A sample whose prediction
/// or scoring fails is listed under `failures` and left out of the table.
pub fn evaluate_view<F>(view: &str, samples: &[EvalSample], mut predict: F, cfg: &RunConfig) -> ViewEval
where
    F: FnMut(&EvalSample) -> Result<MeshVideo, EvalError>,
{
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for s in samples {
        match predict(s).and_then(|p| evaluate_sample(s, &p, &cfg.render, &cfg.eval)) {
            Ok(r) => ok.push(r),
            Err(e) => failures.push(Failure { id: s.id, message: e.to_string() }),
        }
    }
    summarize(view, ok, failures)
}

pub fn report(views: Vec<ViewEval>, cfg: &RunConfig) -> EvalReport {
    let mut notes = vec![AVG_NOTE.to_string(), format!("ASD mode: {}", cfg.eval.asd_mode.name())];
    for v in &views {
        if !v.failures.is_empty() {
            notes.push(format!("{}: {} subject(s) failed and are excluded", v.view, v.failures.len()));
        }
    }
    EvalReport { asd_mode: cfg.eval.asd_mode, views, notes, config: cfg.clone() }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::shapemodel::{default_shape_model, generate_cohort, CohortConfig};

    pub(crate) fn samples(n: usize, frames: usize) -> Vec<EvalSample> {
        let model = default_shape_model(1, 4, 8, 2).unwrap();
        let cohort =
            generate_cohort(&model, &CohortConfig { count: n, frames, seed: 5, motion: Default::default() }).unwrap();
        cohort.into_iter().map(|c| EvalSample { id: c.id, gt_ef: c.ef[&Structure::LV], gt: c.video }).collect()
    }

    #[test]
    fn oracle_injection_is_exact() {
        let cfg = RunConfig::default();
        let s = samples(6, 8);
        let v = evaluate_view("LAX+SAX", &s, |x| Ok(x.gt.clone()), &cfg);
        assert!(v.failures.is_empty(), "{:?}", v.failures);
        assert_eq!(v.samples.len(), 6);
        for r in &v.rows {
            assert!(r.mean < 0.1 && r.mean >= 0.0, "{r:?}");
        }
        assert!(v.pearson_r.unwrap() > 0.999);
        for (gt, pred) in &v.ef_pairs {
            assert!((gt - pred).abs() < 1e-6, "{gt} {pred}");
        }
    }

    #[test]
    fn table_shape() {
        let cfg = RunConfig::default();
        let v = evaluate_view("LAX", &samples(3, 6), |x| Ok(x.gt.clone()), &cfg);
        let names: Vec<&str> = v.rows.iter().map(|r| r.structure.as_str()).collect();
        assert_eq!(names, ["Myo", "LV", "RV", "LA", "RA", "Avg", "Myo", "LV", "RV", "LA", "RA", "Avg"]);
        assert!(v.rows[..6].iter().all(|r| r.phase == Phase::ED));
        assert!(v.rows[6..].iter().all(|r| r.phase == Phase::ES));
    }

    #[test]
    fn translation_is_absorbed_by_icp_but_scaling_is_not() {
        let cfg = RunConfig::default();
        let s = samples(2, 6);
        let moved = evaluate_view(
            "LAX",
            &s,
            |x| {
                let f = x.gt.frames().iter().map(|m| m.translated(Vec3::new(4.0, -3.0, 2.0))).collect();
                Ok(MeshVideo::new(f)?)
            },
            &cfg,
        );
        assert!(moved.mean_asd() < 0.1, "{}", moved.mean_asd());
        let grown = evaluate_view(
            "LAX",
            &s,
            |x| {
                let f = x
                    .gt
                    .frames()
                    .iter()
                    .map(|m| m.with_vertices(m.vertices().iter().map(|v| v * 1.1).collect()))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(MeshVideo::new(f)?)
            },
            &cfg,
        );
        assert!(grown.mean_asd() > 0.5, "{}", grown.mean_asd());
    }

    #[test]
    fn failures_are_counted_not_dropped() {
        let cfg = RunConfig::default();
        let s = samples(3, 6);
        let v = evaluate_view(
            "LAX",
            &s,
            |x| if x.id == 1 { Err(EvalError::Input("no prediction".into())) } else { Ok(x.gt.clone()) },
            &cfg,
        );
        assert_eq!(v.samples.len(), 2);
        assert_eq!(v.failures, vec![Failure { id: 1, message: "no prediction".into() }]);
        let r = report(vec![v], &cfg);
        assert!(r.notes.iter().any(|n| n.contains("1 subject(s) failed")));
    }

    #[test]
    fn single_sample_has_no_correlation() {
        let cfg = RunConfig::default();
        let v = evaluate_view("LAX", &samples(1, 6), |x| Ok(x.gt.clone()), &cfg);
        assert!(v.pearson_r.is_none());
        assert!(v.pearson_note.is_some());
    }

    #[test]
    fn deterministic() {
        let cfg = RunConfig::default();
        let s = samples(2, 6);
        let shift = |x: &EvalSample| {
            let f = x.gt.frames().iter().map(|m| m.translated(Vec3::new(1.0, 0.5, 0.0))).collect();
            Ok(MeshVideo::new(f)?)
        };
        assert_eq!(evaluate_view("LAX", &s, shift, &cfg), evaluate_view("LAX", &s, shift, &cfg));
    }
}
