use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anchor_retarget::anchors::extract_anchors;
use anchor_retarget::character::{build_motion, Character, Motion, Skeleton};
use anchor_retarget::evaluation::compare_motions;
use anchor_retarget::io::{self, RunConfig};
use anchor_retarget::objectives::Scene;
use anchor_retarget::optimizer::{initialize, run, write_trace};
use anchor_retarget::{Error, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

const EXIT_USAGE: u8 = 64;

/// Retarget skinned character motion with surface anchors.
#[derive(Parser, Debug)]
#[command(name = "anchor-retarget", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Anchor extraction.
    #[command(subcommand)]
    Anchors(AnchorsCmd),
    /// Motion retargeting.
    #[command(subcommand)]
    Retarget(RetargetCmd),
    /// Penetration and contact metrics.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Mesh export.
    #[command(subcommand)]
    Export(ExportCmd),
}

#[derive(Subcommand, Debug)]
enum AnchorsCmd {
    /// Cast rays from the bones and store the anchor set with the character.
    Extract {
        #[arg(long = "char")]
        character: PathBuf,
        #[arg(long, default_value_t = anchor_retarget::anchors::DEFAULT_SAMPLES_PER_BONE)]
        samples: usize,
        #[arg(long, default_value_t = anchor_retarget::anchors::DEFAULT_RAYS_PER_SAMPLE)]
        rays: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand, Debug)]
enum RetargetCmd {
    /// Optimize anchors and poses, writing the target motion and loss trace.
    Run {
        #[arg(long)]
        source_char: PathBuf,
        /// JSON motion or BVH file on the source skeleton.
        #[arg(long)]
        source_motion: PathBuf,
        #[arg(long)]
        target_char: PathBuf,
        /// TOML (or `.json`) run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output motion; written as BVH when the extension is `.bvh`.
        #[arg(long)]
        out: PathBuf,
        /// CSV loss trace, one row per iteration.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand, Debug)]
enum EvalCmd {
    /// Penetration rate of motion B and contact preservation from A to B.
    Metrics {
        #[arg(long = "char")]
        character: PathBuf,
        #[arg(long)]
        motion_a: PathBuf,
        #[arg(long)]
        motion_b: PathBuf,
        /// Character of motion B when it differs from `--char`.
        #[arg(long = "char-b")]
        character_b: Option<PathBuf>,
        /// Contact distance threshold; 1% of each character's height by default.
        #[arg(long)]
        delta_c: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand, Debug)]
enum ExportCmd {
    /// Write one skinned OBJ mesh (and anchor cloud) per frame.
    Obj {
        #[arg(long = "char")]
        character: PathBuf,
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Random seed; overrides the configuration file.
    #[arg(long)]
    seed: Option<u64>,
}

fn load_motion(path: &Path, skeleton: &Skeleton) -> Result<Motion> {
    if has_extension(path, "bvh") {
        let data = io::import_bvh(path)?;
        if data.joints.len() != skeleton.len() {
            return Err(Error::Validation(format!(
                "{}: {} joints but the skeleton has {}",
                path.display(),
                data.joints.len(),
                skeleton.len()
            )));
        }
        build_motion(skeleton, data.poses, data.frame_time, None)
    } else {
        io::load_motion(path, skeleton)
    }
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn with_anchors(mut c: Character, config: &RunConfig) -> Result<Character> {
    if c.anchors.is_none() {
        log::info!("extracting anchors for {}", c.name);
        c.anchors = Some(extract_anchors(
            &c.mesh,
            &c.skeleton,
            &c.weights,
            &c.parts,
            config.samples_per_bone,
            config.rays_per_sample,
        )?);
    }
    Ok(c)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Anchors(AnchorsCmd::Extract {
            character,
            samples,
            rays,
            out,
            common: _,
        }) => {
            let mut c = io::load_character(&character)?;
            let set = extract_anchors(&c.mesh, &c.skeleton, &c.weights, &c.parts, samples, rays)?;
            log::info!("{} anchors", set.len());
            c.anchors = Some(set);
            io::save_character(&out, &c)
        }
        Command::Retarget(RetargetCmd::Run {
            source_char,
            source_motion,
            target_char,
            config,
            out,
            trace,
            common,
        }) => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            let source = with_anchors(io::load_character(&source_char)?, &cfg)?;
            let target = with_anchors(io::load_character(&target_char)?, &cfg)?;
            let motion = load_motion(&source_motion, &source.skeleton)?;
            let optim = cfg.optim();
            let (state, reference) = initialize(&source, &motion, &target, &optim)?;
            let scene = Scene::new(&source, &motion, &target, &reference, cfg.scene_options())?;
            let result = run(&scene, &optim, state)?;
            log::info!(
                "{} steps in {:.2?}, final total {:e}",
                optim.steps,
                result.wall_time,
                result.final_report.total()
            );
            if has_extension(&out, "bvh") {
                io::export_bvh(&out, &target.skeleton, &result.motion)?;
            } else {
                io::save_motion(&out, &result.motion)?;
            }
            if let Some(t) = trace {
                write_trace(&t, &result.trace)?;
            }
            Ok(())
        }
        Command::Eval(EvalCmd::Metrics {
            character,
            motion_a,
            motion_b,
            character_b,
            delta_c,
            common: _,
        }) => {
            let a = io::load_character(&character)?;
            let b = match &character_b {
                Some(p) => io::load_character(p)?,
                None => a.clone(),
            };
            let ma = load_motion(&motion_a, &a.skeleton)?;
            let mb = load_motion(&motion_b, &b.skeleton)?;
            let report = compare_motions((&a, &ma.poses()), (&b, &mb.poses()), delta_c)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("metrics serialize"));
            Ok(())
        }
        Command::Export(ExportCmd::Obj {
            character,
            motion,
            out_dir,
            common: _,
        }) => {
            let c = io::load_character(&character)?;
            let m = load_motion(&motion, &c.skeleton)?;
            let written = io::export_obj_sequence(&c, &m.poses(), &out_dir)?;
            log::info!("wrote {} meshes to {}", written.meshes.len(), out_dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
