//! Acceptance report: one PASS/FAIL line per criterion (and sub-check).
//! Exits 1 on any FAIL only when HEART4D_STRICT=1. Set HEART4D_SKIP_E2E=1
//! to skip the hour-long synthetic experiment (reported as SKIP).

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use heart4d::dataset::{CineSequence, Split, ViewKind};
use heart4d::diffcore::{grad_check_sampled, Bound, Checkpoint, DiffError, Graph, ParamSet, Tensor, Var, NETWORK_FLOOR};
use heart4d::evalcli::pipeline::{run_experiment, synthesize, Cohort, Experiment};
use heart4d::evalcli::{evaluate_view, RunConfig};
use heart4d::geometry::*;
use heart4d::imageae::{ImageAe, ImageAeConfig, ImageInput, TrajectoryCode, ViewSelection};
use heart4d::mapping::nets::{init_mlp, BoundNetworks};
use heart4d::mapping::{
    adversarial_losses, cycle_loss, ef_loss, generator_objective, train_ef_predictor, train_mapping, EfConfig,
    EfPredictor, LabeledCodes, Mapping, MappingData, TrainConfig,
};
use heart4d::meshae::{graph_conv_values, MeshAe, MeshAeConfig};
use heart4d::shapemodel::{animate, synth_base_heart, MotionBounds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 100;
/// Elements perturbed per seed in whole-network checks.
const COORDS: usize = 12;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Worst sampled relative error of `loss` over all seeds.
fn network_worst(
    make: impl Fn(u64) -> ParamSet,
    loss: impl Fn(u64, &mut Graph, &Bound) -> Result<Var, DiffError>,
) -> f64 {
    (0..SEEDS)
        .map(|seed| {
            let p = make(seed);
            grad_check_sampled(&p, |g, b| loss(seed, g, b), common::STEP, NETWORK_FLOOR, COORDS, seed)
                .unwrap()
                .max_rel_error
        })
        .fold(0.0, f64::max)
}

fn tiny_image() -> ImageAeConfig {
    ImageAeConfig { size: 8, views: ViewSelection::LaxSax, channels: [2, 2, 2], feature: 3, hidden: 3, latent: 4, kappa: 0.1 }
}

fn tiny_mesh() -> MeshAeConfig {
    MeshAeConfig { width: 4, hidden: 5, latent: 4, vertex_features: 2, scale_mm: 5.0, kappa: 1e-2 }
}

fn random_cine(frames: usize, size: usize, seed: u64) -> CineSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * 4 * size * size).map(|_| rng.gen_range(0.0..1.0)).collect();
    CineSequence::new(frames, ViewKind::ALL.to_vec(), size, 2.0, data)
}

fn mapping_params(seed: u64) -> (ParamSet, ParamSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = ParamSet::new();
    for net in ["gen.m", "gen.i"] {
        init_mlp(&mut m, net, 5, 6, 5, &mut rng);
    }
    for net in ["disc.m", "disc.i"] {
        init_mlp(&mut m, net, 5, 6, 1, &mut rng);
    }
    let mut e = ParamSet::new();
    init_mlp(&mut e, "ef", 5, 6, 1, &mut rng);
    (m, e)
}

fn criterion_1(r: &mut Report) {
    let t = Instant::now();
    let suite = common::all_primitives(SEEDS);
    let prim_worst = suite.results.iter().map(|x| x.1).fold(0.0, f64::max);
    let bad: Vec<String> = suite.failures().iter().map(|(l, e)| format!("{l} {e:.1e}")).collect();

    let mut losses: Vec<(&str, f64)> = Vec::new();
    let img = tiny_image();
    losses.push((
        "image reconstruction",
        network_worst(
            |seed| ImageAe::new(img.clone(), seed).unwrap().params,
            |seed, g, b| {
                let ae = ImageAe::new(img.clone(), seed).unwrap();
                let x = ImageInput::from_cine(&random_cine(3, 8, seed + 1000), &img).unwrap();
                ae.loss_graph(g, b, &x)
            },
        ),
    ));

    let base = synth_base_heart(1, 1).unwrap();
    let videos: Vec<MeshVideo> = (0..4)
        .map(|k| {
            let motion = MotionBounds::default().sample(&mut ChaCha8Rng::seed_from_u64(k));
            animate(&base, &motion, 3).unwrap().0
        })
        .collect();
    let mesh_models: Vec<(MeshAe, f64)> = (0..SEEDS)
        .map(|seed| {
            let ae = MeshAe::new(tiny_mesh(), base.clone(), seed).unwrap();
            let l0 = ae.loss(&videos[seed as usize % 4]).unwrap();
            (ae, l0)
        })
        .collect();
    losses.push((
        "mesh reconstruction",
        network_worst(
            |seed| mesh_models[seed as usize].0.params.clone(),
            |seed, g, b| {
                // mm² loss divided by its starting value, as in the unit tests
                let (ae, l0) = &mesh_models[seed as usize];
                let coords = MeshAe::video_tensor(&videos[seed as usize % 4]);
                let l = ae.loss_graph(g, b, &coords)?;
                g.scale(l, 1.0 / l0)
            },
        ),
    ));

    let batch = |g: &mut Graph, seed: u64| -> Result<Var, DiffError> {
        g.input(rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &[3, 5], -1.0, 1.0))
    };
    let labels = |seed: u64| rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &[3, 1], 0.2, 0.8);
    type MapLoss = fn(&mut Graph, &BoundNetworks, Var, Var, &Tensor, &Tensor) -> Result<Var, DiffError>;
    let cases: [(&str, MapLoss); 5] = [
        ("adversarial (discriminators)", |g, n, xi, xm, _, _| {
            let a = adversarial_losses(g, n, xi, xm)?;
            g.add(a.disc_m, a.disc_i)
        }),
        ("adversarial (generators)", |g, n, xi, xm, _, _| {
            let a = adversarial_losses(g, n, xi, xm)?;
            g.add(a.gen_m, a.gen_i)
        }),
        ("cycle", |g, n, xi, xm, _, _| cycle_loss(g, n, xi, xm)),
        ("EF", |g, n, xi, xm, ei, em| ef_loss(g, n, xi, ei, xm, em)),
        ("joint generator objective", |g, n, xi, xm, ei, em| {
            Ok(generator_objective(g, n, [1.0, 1.0, 10.0, 10.0], xi, ei, xm, em)?.total)
        }),
    ];
    for (name, f) in cases {
        let worst = network_worst(
            |seed| mapping_params(seed).0,
            |seed, g, b| {
                let e = mapping_params(seed).1;
                let eb = g.bind(&e, false)?;
                let nets = BoundNetworks { mapping: b, ef: &eb };
                let (xi, xm) = (batch(g, seed + 100)?, batch(g, seed + 200)?);
                f(g, &nets, xi, xm, &labels(seed + 300), &labels(seed + 400))
            },
        );
        losses.push((name, worst));
    }
    let secs = t.elapsed().as_secs_f64();
    let loss_ok = losses.iter().all(|l| l.1 < common::TOL);
    let loss_text: Vec<String> = losses.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    r.line(
        "1 gradient oracle",
        bad.is_empty() && loss_ok && secs < 120.0,
        format!(
            "{} primitives worst {prim_worst:.1e}{}; losses: {}; {SEEDS} seeds, tol 1e-4; {secs:.0}s (limit 120s)",
            suite.results.len(),
            if bad.is_empty() { String::new() } else { format!(" (failing: {})", bad.join(", ")) },
            loss_text.join(", ")
        ),
    );
}

fn cube(s: f64) -> SurfaceMesh {
    let v = [(0., 0., 0.), (s, 0., 0.), (s, s, 0.), (0., s, 0.), (0., 0., s), (s, 0., s), (s, s, s), (0., s, s)]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z))
        .collect();
    let f = vec![
        [0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7], [0, 1, 5], [0, 5, 4],
        [1, 2, 6], [1, 6, 5], [2, 3, 7], [2, 7, 6], [3, 0, 4], [3, 4, 7],
    ];
    SurfaceMesh::single(v, f, Structure::LV).unwrap()
}

fn criterion_2(r: &mut Report) {
    let t = Instant::now();
    let (v, f) = icosphere(10.0, 3);
    let sphere = SurfaceMesh::single(v, f, Structure::LV).unwrap();
    let exact = 4.0 / 3.0 * PI * 1000.0 / MM3_PER_ML;
    let sphere_err = (enclosed_volume(&sphere, Structure::LV).unwrap() - exact).abs() / exact;

    let cube_err = (enclosed_volume(&cube(10.0), Structure::LV).unwrap() - 1.0).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let src: Vec<Vec3> = (0..200)
        .map(|_| Vec3::new(rng.gen_range(-30.0..30.0), rng.gen_range(-15.0..15.0), rng.gen_range(-6.0..6.0)))
        .collect();
    let mut icp_err: f64 = 0.0;
    for deg in [5.0, 15.0, 30.0] {
        let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0);
        let truth = RigidTransform::from_axis_angle(axis, f64::to_radians(deg), Vec3::new(2.0, -1.0, 3.0));
        let dst: Vec<Vec3> = src.iter().map(|p| truth.apply(p)).collect();
        let found = icp_align(&src, &PointTarget::new(dst), &IcpConfig::default()).unwrap();
        let (dr, dt) = truth.inverse().compose(&found.transform).deviation_from_identity();
        icp_err = icp_err.max(dr).max(dt);
    }

    let a: Vec<Vec3> = (0..=60).flat_map(|i| (0..=60).map(move |j| Vec3::new(i as f64 * 0.5, j as f64 * 0.5, 0.0))).collect();
    let b: Vec<Vec3> = (0..=100)
        .flat_map(|i| (0..=100).map(move |j| Vec3::new(-10.0 + i as f64 * 0.5, -10.0 + j as f64 * 0.5, 3.0)))
        .collect();
    let asd = average_surface_distance(&Surface::Points(&b), &Surface::Points(&a), AsdMode::GtToMesh, &SurfaceSampling::default())
        .unwrap();
    let asd_err = (asd - 3.0).abs() / 3.0;

    let ef = ejection_fraction(&[100.0, 85.0, 60.0, 40.0, 70.0]).unwrap().ef;
    let secs = t.elapsed().as_secs_f64();
    r.line(
        "2 geometry oracles",
        sphere_err < 0.01 && cube_err < 1e-9 && icp_err < 1e-6 && asd_err < 0.02 && (ef - 0.6).abs() < 1e-12 && secs < 60.0,
        format!(
            "icosphere {:.3}% off, cube {cube_err:.1e}, ICP ≤30° {icp_err:.1e}, plane ASD {asd:.4} mm, EF {ef:.12}; {secs:.1}s",
            100.0 * sphere_err
        ),
    );
}

fn permute_equivariance() -> f64 {
    let mesh = synth_base_heart(2, 1).unwrap();
    let graph = adjacency(&mesh);
    let n = graph.vertex_count();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = rand_tensor(&mut rng, &[n, 3], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    // new index perm[i] holds old vertex i
    let edges: Vec<(usize, usize)> =
        (0..n).flat_map(|i| graph.neighbors(i).iter().map(|&j| (perm[i], perm[j])).collect::<Vec<_>>()).collect();
    let pg = AdjacencyGraph::from_edges(n, edges);
    let mut ph = vec![0.0; n * 3];
    for i in 0..n {
        ph[perm[i] * 3..perm[i] * 3 + 3].copy_from_slice(&h.data()[i * 3..i * 3 + 3]);
    }
    let out = graph_conv_values(&h, &graph, &w, true).unwrap();
    let pout = graph_conv_values(&Tensor::new(vec![n, 3], ph).unwrap(), &pg, &w, true).unwrap();
    (0..n)
        .flat_map(|i| (0..4).map(move |c| (i, c)))
        .map(|(i, c)| (out.data()[i * 4 + c] - pout.data()[perm[i] * 4 + c]).abs())
        .fold(0.0, f64::max)
}

fn ckpt_round_trip(ck: &Checkpoint) -> Checkpoint {
    let mut bytes = Vec::new();
    ck.write_to(&mut bytes).unwrap();
    Checkpoint::read_from(bytes.as_slice()).unwrap()
}

fn criterion_3(r: &mut Report) {
    let t = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;

    let img = ImageAe::new(ImageAeConfig { size: 16, ..tiny_image() }, 3).unwrap();
    let code = TrajectoryCode { r: 1.3, theta0: -0.5, s: vec![0.2, 0.4] };
    let mut periodic = true;
    for t in 0..8 {
        periodic &= img.decode(&code, t, 8).unwrap() == img.decode(&code, t + 8, 8).unwrap();
    }
    let base = synth_base_heart(1, 1).unwrap();
    let mesh_ae = MeshAe::new(tiny_mesh(), base.clone(), 4).unwrap();
    for t in 0..6 {
        periodic &= mesh_ae.decode(&code, t, 6).unwrap() == mesh_ae.decode(&code, t + 6, 6).unwrap();
    }
    ok &= periodic;
    notes.push(format!("periodicity {}", if periodic { "exact" } else { "broken" }));

    let video = mesh_ae.decode_video(&TrajectoryCode { r: 2.0, theta0: 0.3, s: vec![-0.5, 1.0] }, 7).unwrap();
    let topo = video.frames().iter().all(|f| f.same_topology(&base));
    ok &= topo;
    notes.push(format!("decoder topology {}", if topo { "kept" } else { "changed" }));

    let perm = permute_equivariance();
    ok &= perm < 1e-12;
    notes.push(format!("graph-conv permutation {perm:.1e}"));

    // frozen networks through mapping training
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let motion = || MotionBounds::default();
    let videos: Vec<MeshVideo> = (0..12).map(|_| animate(&base, &motion().sample(&mut rng), 4).unwrap().0).collect();
    let cines: Vec<CineSequence> = (0..12).map(|k| random_cine(4, 16, 50 + k)).collect();
    let labeled = |codes: Vec<Vec<f64>>, rng: &mut ChaCha8Rng| {
        let ef = codes.iter().map(|_| vec![rng.gen_range(0.3..0.7)]).collect();
        LabeledCodes { codes, ef }
    };
    let mesh_codes_all: Vec<Vec<f64>> = videos.iter().map(|v| mesh_ae.encode(v).unwrap().to_vector()).collect();
    let img_codes_all: Vec<Vec<f64>> = cines.iter().map(|c| img.encode(c).unwrap().to_vector()).collect();
    let mesh_train = labeled(mesh_codes_all[..8].to_vec(), &mut rng);
    let mesh_val = labeled(mesh_codes_all[8..].to_vec(), &mut rng);
    let (ef, _) = train_ef_predictor(&mesh_train, &mesh_val, &EfConfig { epochs: 3, width: 8, ..EfConfig::default() }).unwrap();
    let before = (img.params.clone(), mesh_ae.params.clone(), ef.params.clone());
    let data = MappingData {
        image_train: labeled(img_codes_all[..8].to_vec(), &mut rng),
        mesh_train,
        image_val: labeled(img_codes_all[8..].to_vec(), &mut rng),
        mesh_val,
    };
    let (mapping, _) = train_mapping(&data, &ef, &TrainConfig { max_epochs: 3, width: 8, ..TrainConfig::default() }).unwrap();
    let frozen = before == (img.params.clone(), mesh_ae.params.clone(), ef.params.clone());
    ok &= frozen;
    notes.push(format!("frozen networks {}", if frozen { "bit-identical" } else { "modified" }));

    let exact = ImageAe::from_checkpoint(&ckpt_round_trip(&img.checkpoint())).unwrap().params == img.params
        && MeshAe::from_checkpoint(&ckpt_round_trip(&mesh_ae.checkpoint())).unwrap().params == mesh_ae.params
        && EfPredictor::from_checkpoint(&ckpt_round_trip(&ef.checkpoint())).unwrap() == ef
        && Mapping::from_checkpoint(&ckpt_round_trip(&mapping.checkpoint())).unwrap() == mapping;
    ok &= exact;
    notes.push(format!("checkpoints {}", if exact { "bit-exact" } else { "differ" }));

    let secs = t.elapsed().as_secs_f64();
    r.line("3 structural invariants", ok && secs < 120.0, format!("{}; {secs:.1}s", notes.join(", ")));
}

/// Symmetric per-structure ASD of mesh-AE reconstructions and of the
/// undeformed template against image-test ground truth at GT ED and ES.
fn mesh_ae_recon(e: &Experiment) -> (f64, f64) {
    let sampling = SurfaceSampling { points_per_structure: 1000, seed: 0 };
    let (mut rec, mut base, mut n) = (0.0, 0.0, 0.0);
    for &id in e.cohort.ids(Split::ImageTest) {
        let gt = e.cohort.video(id).unwrap();
        let out = e.mesh_ae.decode_video(&e.mesh_ae.encode(gt).unwrap(), gt.len()).unwrap();
        let lv = ejection_fraction(&volume_curve(gt, Structure::LV).unwrap()).unwrap();
        for f in [lv.ed_frame, lv.es_frame] {
            for s in Structure::ALL {
                let truth = Surface::Mesh { mesh: gt.frame(f), structure: s };
                let d = |m: &SurfaceMesh| {
                    average_surface_distance(&Surface::Mesh { mesh: m, structure: s }, &truth, AsdMode::Symmetric, &sampling)
                        .unwrap()
                };
                rec += d(out.frame(f));
                base += d(&e.cohort.template);
                n += 1.0;
            }
        }
    }
    (rec / n, base / n)
}

fn criterion_4(r: &mut Report, cfg: &RunConfig) {
    if std::env::var("HEART4D_SKIP_E2E").is_ok_and(|v| v == "1") {
        println!("SKIP 4 synthetic end-to-end: HEART4D_SKIP_E2E=1");
        return;
    }
    let t = Instant::now();
    let e = run_experiment(cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let test = e.cohort.ids(Split::ImageTest).len();
    let p = &cfg.cohort.pools();
    r.line(
        "4 synthetic end-to-end",
        secs < 4.0 * 3600.0,
        format!(
            "{} image subjects ({}/{}/{}) + {} mesh subjects, N={}, {}×{} images; {:.1} min (limit 240)",
            cfg.cohort.count,
            p.image_train,
            p.image_val,
            p.image_test,
            p.mesh_train + p.mesh_val,
            cfg.cohort.frames,
            cfg.render.size,
            cfg.render.size,
            secs / 60.0
        ),
    );

    let (rec, base) = mesh_ae_recon(&e);
    r.line("4a mesh-AE reconstruction", rec < 0.5 * base, format!("ASD {rec:.3} mm vs template {base:.3} mm (ratio {:.3}, need < 0.5)", rec / base));

    let mut ok = true;
    let mut parts = Vec::new();
    for v in &e.views {
        let (e0, best) = (v.mapping_report.history[0].val_ef, v.mapping_report.best().val_ef);
        ok &= best < 0.5 * e0;
        parts.push(format!("{} {best:.4} at epoch {} vs {e0:.4} at epoch 0 (ratio {:.3})", v.view.name(), v.mapping_report.best_epoch, best / e0));
    }
    r.line("4b validation EF loss", ok, format!("{}; need < 0.5", parts.join("; ")));

    let both = e.report.view("LAX+SAX").zip(e.report.view("LAX"));
    let Some((multi, lax)) = both else {
        r.line("4c EF correlation", false, "LAX+SAX and LAX configurations are both required".into());
        return;
    };
    let rr = multi.pearson_r.unwrap_or(f64::NAN);
    r.line(
        "4c EF correlation",
        rr >= 0.5 && multi.samples.len() == test,
        format!(
            "LAX+SAX r = {rr:.3} over {} of {test} test subjects (LAX r = {:.3}); need ≥ 0.5",
            multi.samples.len(),
            lax.pearson_r.unwrap_or(f64::NAN)
        ),
    );
    let (a, b) = (multi.mean_asd(), lax.mean_asd());
    r.line("4d view configurations", a <= b + 0.5, format!("mean ASD LAX+SAX {a:.3} mm vs LAX {b:.3} mm; need ≤ LAX + 0.5"));
}

fn criterion_5(r: &mut Report, cfg: &RunConfig, cohort: &Cohort) {
    let t = Instant::now();
    let samples = cohort.eval_samples(Split::ImageTest).unwrap();
    let v = evaluate_view("oracle", &samples, |s| Ok(s.gt.clone()), cfg);
    let worst = v.rows.iter().map(|x| x.mean).fold(0.0, f64::max);
    let rr = v.pearson_r.unwrap_or(f64::NAN);
    r.line(
        "5 oracle injection",
        v.failures.is_empty() && worst < 0.1 && rr > 0.999,
        format!(
            "{} subjects, worst mean ASD {worst:.2e} mm, r = {rr:.6}, {} failures; {:.1}s",
            v.samples.len(),
            v.failures.len(),
            t.elapsed().as_secs_f64()
        ),
    );
}

fn main() {
    let mut r = Report { failed: 0 };
    criterion_1(&mut r);
    criterion_2(&mut r);
    criterion_3(&mut r);
    let cfg = RunConfig::default();
    let cohort = synthesize(&cfg).unwrap();
    criterion_5(&mut r, &cfg, &cohort);
    drop(cohort);
    criterion_4(&mut r, &cfg);
    if r.failed > 0 {
        println!("{} acceptance check(s) failed", r.failed);
        if std::env::var("HEART4D_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
        return;
    }
    println!("all acceptance checks passed");
}
