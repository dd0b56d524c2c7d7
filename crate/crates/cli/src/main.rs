mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use partdistill::dataio::{pnm, write_json, Checkpoint, ObservationSet};
use partdistill::distill::{distill, RigidMotion};
use partdistill::geom::Camera;
use partdistill::metrics::evaluate;
use partdistill::parallel::Workers;
use partdistill::render::render_image_composite;
use partdistill::scenegen::{fibonacci_cameras, gen_dataset, SceneGt, SceneSpec, Template};
use partdistill::staticfit::fit_static;
use partdistill::{Error, Result};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "partdistill", version, about = "Part-level articulation from two multi-view observations")]
struct Cli {
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Flat `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a procedural articulated scene in both states.
    Gen {
        #[arg(long)]
        template: Template,
        #[arg(long, default_value_t = 20)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        res: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the static radiance field to the source observation.
    FitStatic {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Fit report path; defaults to the checkpoint path with a `.report.json` extension.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Recover part segmentation and motions from the target observation.
    Distill {
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        parts: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a distilled model against the target observation.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
        /// Ground-truth sidecar; without it only PSNR is reported.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render an articulation sequence from one camera.
    Render {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// Interpolation steps; STEPS + 1 frames from source (α = 0) to target
        /// (α = 1). Zero renders the target state only.
        #[arg(long, default_value_t = 0)]
        interp: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Observation whose cameras are used; otherwise the default rig.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Size of the default rig.
        #[arg(long, default_value_t = 20)]
        rig_views: usize,
        #[arg(long, default_value_t = 64)]
        res: usize,
    },
}

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| Error::invalid(format!("missing --{name} (or paths.{name} in the config file)")))
}

fn report_path(out: &Path, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| out.with_extension("report.json"))
}

fn workers(cfg: &RunConfig, flag: Option<usize>) -> Result<Workers> {
    Workers::new(flag.or(cfg.workers).unwrap_or_else(Workers::default_count))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => config::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed);
    if let Some(s) = seed {
        cfg.fit.seed = s;
        cfg.distill.seed = s;
    }
    let seed = seed.unwrap_or(0);
    let pool = workers(&cfg, cli.workers)?;
    match cli.command {
        Command::Gen { template, views, res, out } => {
            let out = required(out, &cfg.paths.out, "out")?;
            if views == 0 || res == 0 {
                return Err(Error::invalid("--views and --res must be positive"));
            }
            let spec = SceneSpec::from_template(template)?;
            let d = gen_dataset(&spec, views, res, seed, &out, &pool)?;
            println!("wrote {} + {} views to {}", d.source.len(), d.target.len(), out.display());
        }
        Command::FitStatic {
            data,
            out,
            iterations,
            report,
        } => {
            let data = required(data, &cfg.paths.data, "data")?;
            let out = required(out, &cfg.paths.out, "out")?;
            if let Some(n) = iterations {
                cfg.fit.iterations = n;
            }
            cfg.fit.validate()?;
            let obs = ObservationSet::read(&data)?;
            let (field, rep) = fit_static(&obs, &cfg.fit, &pool)?;
            Checkpoint::from_field(field).save(&out)?;
            write_json(&report_path(&out, report), &rep)?;
            println!("holdout PSNR {:.2} dB after {} steps; final loss {:.5}", rep.holdout_psnr, rep.steps, rep.final_loss);
            if rep.diverged {
                return Err(Error::Diverged {
                    steps: rep.steps,
                    window: partdistill::staticfit::DIVERGENCE_SPAN,
                });
            }
        }
        Command::Distill {
            field,
            target,
            parts,
            out,
            report,
        } => {
            let field_path = required(field, &cfg.paths.field, "field")?;
            let target = required(target, &cfg.paths.target, "target")?;
            let out = required(out, &cfg.paths.out, "out")?;
            if let Some(k) = parts {
                cfg.distill.parts = k;
            }
            cfg.distill.validate()?;
            let mut field = Checkpoint::load(&field_path)?.field;
            field.freeze();
            let obs = ObservationSet::read(&target)?;
            let res = distill(&field, &obs, &cfg.distill, &pool)?;
            let ck = Checkpoint {
                field,
                head: Some(res.head),
                motions: Some(res.motion.twists().to_vec()),
                voxels: Some(res.voxels.record()),
            };
            ck.save(&out)?;
            write_json(&report_path(&out, report), &res.report)?;
            for (l, j) in res.report.joints.iter().enumerate() {
                match j {
                    Some(j) => println!("part {}: {}", l + 1, serde_json::to_string(j).unwrap_or_default()),
                    None => println!("part {}: no motion", l + 1),
                }
            }
            println!("best validation PSNR {:.2} dB (cycle {})", res.report.best_psnr, res.report.best_cycle);
            for f in &res.report.flags {
                log::warn!("{f}");
            }
        }
        Command::Eval { model, target, gt, out } => {
            let model = required(model, &cfg.paths.model, "model")?;
            let target = required(target, &cfg.paths.target, "target")?;
            let out = required(out, &cfg.paths.out, "out")?;
            let gt = gt.or(cfg.paths.gt.clone()).map(|p| SceneGt::read(&p)).transpose()?;
            let ck = Checkpoint::load(&model)?;
            let (head, motion) = model_parts(&ck)?;
            let obs = ObservationSet::read(&target)?;
            let joints = gt.as_ref().map(|g| g.spec.joints.as_slice());
            let rep = evaluate(&ck.field, head, &motion.transforms(), &obs, joints, cfg.distill.sampling, seed, &pool)?;
            write_json(&out, &rep)?;
            print!("{}", rep.table());
        }
        Command::Render {
            model,
            view,
            interp,
            out,
            data,
            rig_views,
            res,
        } => {
            let model = required(model, &cfg.paths.model, "model")?;
            let out = required(out, &cfg.paths.out, "out")?;
            let ck = Checkpoint::load(&model)?;
            let (head, motion) = model_parts(&ck)?;
            let cam = camera_for(data.or(cfg.paths.data.clone()).as_deref(), view, rig_views, res, seed)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            for s in 0..=interp {
                let alpha = if interp == 0 { 1.0 } else { s as f64 / interp as f64 };
                let motions = motion.scaled(alpha).part_motions()?;
                let img = render_image_composite(&ck.field, head, &motions, &cam, cfg.distill.sampling, seed, &pool)?;
                let rgb: Vec<u8> = img.rgb().iter().flatten().map(|&c| to_u8(c)).collect();
                pnm::write(&out.join(format!("frame_{s:03}.ppm")), cam.width, cam.height, 3, &rgb)?;
                pnm::write(&out.join(format!("labels_{s:03}.pgm")), cam.width, cam.height, 1, &img.labels())?;
            }
            println!("wrote {} frames to {}", interp + 1, out.display());
        }
    }
    Ok(())
}

fn model_parts(ck: &Checkpoint) -> Result<(&partdistill::field::SegmentationHead<f64>, RigidMotion)> {
    let (Some(head), Some(twists)) = (&ck.head, &ck.motions) else {
        return Err(Error::invalid("checkpoint holds no distilled model (segmentation head and motions)"));
    };
    Ok((head, RigidMotion::from_twists(twists.clone())?))
}

fn camera_for(data: Option<&Path>, view: usize, rig_views: usize, res: usize, seed: u64) -> Result<Camera<f64>> {
    match data {
        Some(dir) => {
            let obs = ObservationSet::read(dir)?;
            if view >= obs.len() {
                return Err(Error::invalid(format!("view {view} out of range; the observation has {} views", obs.len())));
            }
            obs.camera(view)
        }
        None => {
            if view >= rig_views {
                return Err(Error::invalid(format!("view {view} out of range; the rig has {rig_views} views")));
            }
            Ok(fibonacci_cameras(rig_views, res, seed)?.swap_remove(view))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        e if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
