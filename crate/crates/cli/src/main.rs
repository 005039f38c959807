use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use heart4d::dataset::Split;
use heart4d::diffcore::Checkpoint;
use heart4d::evalcli::pipeline::{self, Cohort};
use heart4d::evalcli::rundir::{self, RunDir};
use heart4d::evalcli::{self as ev, EvalError, RunConfig};
use heart4d::imageae::{ImageAe, TrainReport, ViewSelection};
use heart4d::mapping::{EfPredictor, EpochRecord, Mapping};
use heart4d::meshae::MeshAe;

#[derive(Parser)]
#[command(name = "heart4d", version, about = "Synthetic 4D whole-heart reconstruction experiments")]
struct Cli {
    /// Run directory holding config, data, models and reports.
    #[arg(long, short = 'd', global = true, default_value = "run")]
    run_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the cohort, render cines and write the manifest.
    Synth {
        /// TOML run configuration; defaults are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Image cohort size (overrides cohort.count).
        #[arg(long)]
        count: Option<usize>,
        /// Overrides the top-level seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one image autoencoder per view configuration.
    TrainAeImage {
        #[arg(long, value_parser = parse_view)]
        view: Option<ViewSelection>,
    },
    /// Train the mesh autoencoder on the mesh pool.
    TrainAeMesh,
    /// Train the EF predictor on mesh codes.
    TrainEf,
    /// Train the latent mapping per view configuration.
    TrainMapping {
        #[arg(long, value_parser = parse_view)]
        view: Option<ViewSelection>,
    },
    /// Write predicted mesh videos of the test subjects.
    Infer {
        #[arg(long, value_parser = parse_view)]
        view: Option<ViewSelection>,
    },
    /// Evaluate every view configuration on the test subjects.
    Eval,
    /// Write tables and plots from the evaluation report.
    Report,
}

fn parse_view(s: &str) -> Result<ViewSelection, String> {
    match s.to_ascii_lowercase().as_str() {
        "lax" => Ok(ViewSelection::Lax),
        "lax-sax" | "lax+sax" => Ok(ViewSelection::LaxSax),
        _ => Err(format!("unknown view `{s}` (expected lax or lax-sax)")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let t = Instant::now();
    match run(&cli) {
        Ok(()) => {
            eprintln!("done in {:.1}s", t.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn views(cfg: &RunConfig, only: Option<ViewSelection>) -> Result<Vec<ViewSelection>, EvalError> {
    match only {
        Some(v) if !cfg.views.contains(&v) => Err(EvalError::Config(format!("view {} is not configured", v.name()))),
        Some(v) => Ok(vec![v]),
        None => Ok(cfg.views.clone()),
    }
}

fn loss_log(r: &TrainReport) -> String {
    let mut s = format!("epoch,loss\n0,{}\n", r.initial_loss);
    for (i, l) in r.history.iter().enumerate() {
        s.push_str(&format!("{},{l}\n", i + 1));
    }
    s
}

struct Ctx {
    dir: RunDir,
    cfg: RunConfig,
    cohort: Cohort,
}

impl Ctx {
    fn open(dir: &RunDir) -> Result<Ctx, EvalError> {
        let cfg = dir.load_config()?;
        let cohort = dir.load_cohort()?;
        Ok(Ctx { dir: dir.clone(), cfg, cohort })
    }

    fn ckpt(&self, rel: &str, what: &str) -> Result<Checkpoint, EvalError> {
        self.dir.load_checkpoint(rel, what)
    }

    fn mesh_ae(&self) -> Result<MeshAe, EvalError> {
        Ok(MeshAe::from_checkpoint(&self.ckpt(rundir::MESH_AE_MODEL, "mesh autoencoder checkpoint")?)?)
    }

    fn ef(&self) -> Result<EfPredictor, EvalError> {
        Ok(EfPredictor::from_checkpoint(&self.ckpt(rundir::EF_MODEL, "EF predictor checkpoint")?)?)
    }

    fn image_ae(&self, v: ViewSelection) -> Result<ImageAe, EvalError> {
        Ok(ImageAe::from_checkpoint(&self.ckpt(&rundir::image_ae_model(v), "image autoencoder checkpoint")?)?)
    }

    fn mapping(&self, v: ViewSelection) -> Result<Mapping, EvalError> {
        Ok(Mapping::from_checkpoint(&self.ckpt(&rundir::mapping_model(v), "mapping checkpoint")?)?)
    }
}

fn run(cli: &Cli) -> Result<(), EvalError> {
    let dir = RunDir::new(&cli.run_dir);
    match &cli.command {
        Command::Synth { config, count, seed } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if let Some(n) = count {
                cfg.cohort.count = *n;
            }
            if let Some(s) = seed {
                cfg.seed = *s;
            }
            cfg.validate()?;
            let cohort = pipeline::synthesize(&cfg)?;
            dir.save_config(&cfg)?;
            dir.save_cohort(&cohort)?;
            eprintln!("wrote {} subjects to {}", cohort.manifest.samples.len(), dir.root.display());
        }
        Command::TrainAeImage { view } => {
            let ctx = Ctx::open(&dir)?;
            for v in views(&ctx.cfg, *view)? {
                let (ae, rep) = pipeline::train_image_stage(&ctx.cfg, &ctx.cohort, v)?;
                dir.save_checkpoint(&rundir::image_ae_model(v), &ae.checkpoint())?;
                dir.write(&format!("logs/image_ae_{}.csv", rundir::view_slug(v)), loss_log(&rep).as_bytes())?;
                eprintln!("{}: loss {:.4} -> {:.4}", v.name(), rep.initial_loss, rep.final_loss);
            }
        }
        Command::TrainAeMesh => {
            let ctx = Ctx::open(&dir)?;
            let (ae, rep) = pipeline::train_mesh_stage(&ctx.cfg, &ctx.cohort)?;
            dir.save_checkpoint(rundir::MESH_AE_MODEL, &ae.checkpoint())?;
            dir.write("logs/mesh_ae.csv", loss_log(&rep).as_bytes())?;
            eprintln!("mesh: loss {:.4} -> {:.4}", rep.initial_loss, rep.final_loss);
        }
        Command::TrainEf => {
            let ctx = Ctx::open(&dir)?;
            let (ef, rep) = pipeline::train_ef_stage(&ctx.cfg, &ctx.cohort, &ctx.mesh_ae()?)?;
            dir.save_checkpoint(rundir::EF_MODEL, &ef.checkpoint())?;
            let mut log = String::from("epoch,l1\n");
            for (i, l) in rep.history.iter().enumerate() {
                log.push_str(&format!("{},{l}\n", i + 1));
            }
            log.push_str(&format!("# validation MAE {}\n", rep.val_mae));
            dir.write("logs/ef_predictor.csv", log.as_bytes())?;
            eprintln!("EF predictor: validation MAE {:.4}", rep.val_mae);
        }
        Command::TrainMapping { view } => {
            let ctx = Ctx::open(&dir)?;
            let (mesh_ae, ef) = (ctx.mesh_ae()?, ctx.ef()?);
            for v in views(&ctx.cfg, *view)? {
                let image_ae = ctx.image_ae(v)?;
                let (m, rep) = pipeline::train_mapping_stage(&ctx.cfg, &ctx.cohort, &image_ae, &mesh_ae, &ef)?;
                dir.save_checkpoint(&rundir::mapping_model(v), &m.checkpoint())?;
                let mut log = format!("{}\n", EpochRecord::CSV_HEADER);
                for r in &rep.history {
                    log.push_str(&r.csv_row());
                    log.push('\n');
                }
                log.push_str(&format!("# best epoch {}, stopped early: {}\n", rep.best_epoch, rep.stopped_early));
                dir.write(&format!("logs/mapping_{}.csv", rundir::view_slug(v)), log.as_bytes())?;
                eprintln!("{}: best epoch {} (validation EF loss {:.4})", v.name(), rep.best_epoch, rep.best().val_ef);
            }
        }
        Command::Infer { view } => {
            let ctx = Ctx::open(&dir)?;
            let mesh_ae = ctx.mesh_ae()?;
            for v in views(&ctx.cfg, *view)? {
                let videos = pipeline::infer_stage(&ctx.cfg, &ctx.cohort, &ctx.image_ae(v)?, &ctx.mapping(v)?, &mesh_ae)?;
                for (id, video) in &videos {
                    let rels: Vec<String> = (0..video.len())
                        .map(|t| format!("infer/{}/{id:04}/frame_{t:02}.obj", rundir::view_slug(v)))
                        .collect();
                    dir.save_video(&rels, video)?;
                }
                eprintln!("{}: {} predicted videos", v.name(), videos.len());
            }
        }
        Command::Eval => {
            let ctx = Ctx::open(&dir)?;
            let mut models = Vec::new();
            for &v in &ctx.cfg.views {
                models.push((v, ctx.mapping(v)?, ctx.image_ae(v)?));
            }
            let mesh_ae = ctx.mesh_ae()?;
            let mut evals = Vec::new();
            for (v, mapping, image_ae) in models {
                let e = pipeline::evaluate_stage(&ctx.cfg, &ctx.cohort, v, &image_ae, &mapping, &mesh_ae)?;
                eprintln!(
                    "{}: mean ASD {:.3} mm, r = {}, {} evaluated, {} failed",
                    v.name(),
                    e.mean_asd(),
                    e.pearson_r.map_or("n/a".into(), |r| format!("{r:.3}")),
                    e.samples.len(),
                    e.failures.len()
                );
                evals.push(e);
            }
            let test = ctx.cohort.ids(Split::ImageTest).len();
            let report = ev::report(evals, &ctx.cfg);
            dir.save_report(&report)?;
            eprintln!("{test} test subjects; report in {}", dir.path(rundir::EVAL_REPORT).display());
        }
        Command::Report => {
            let r = dir.load_report()?;
            dir.write("report/asd_table.csv", ev::asd_table_csv(&r).as_bytes())?;
            dir.write("report/ef_scatter.csv", ev::ef_scatter_csv(&r).as_bytes())?;
            dir.write("report/volume_curves.csv", ev::volume_curves_csv(&r).as_bytes())?;
            dir.write("report/ef_scatter.svg", ev::ef_scatter_svg(&r).as_bytes())?;
            dir.write("report/volume_curves.svg", ev::volume_curves_svg(&r).as_bytes())?;
            dir.write("report/config.toml", r.config.to_toml().as_bytes())?;
            eprintln!("report written to {}", dir.path("report").display());
        }
    }
    Ok(())
}
