//! `sdfrecon`: synthetic scene generation, training, mesh extraction,
//! evaluation and debug renders.
//!
//! Exit codes: 0 success, 2 invalid input, 3 runtime failure. Failures print
//! one line `error[CODE]: message` to stderr.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdfrecon::metrics::DEFAULT_TAU;
use sdfrecon::{Error, Preset, Result};

use commands::{SyntheticArgs, TrainArgs};
use manifest::Run;

/// Overrides the number of worker threads.
const WORKERS_ENV: &str = "SDFRECON_WORKERS";

#[derive(Parser)]
#[command(name = "sdfrecon", version, about = "Neural SDF reconstruction with checked normal priors")]
struct Cli {
    /// Seed for every stochastic step of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace the output directory of a previous run.
    #[arg(long, global = true)]
    overwrite: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Out {
    /// Output directory (receives manifest.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene directory with ground truth.
    MakeSynthetic {
        /// Key-value spec file.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// plane, box_room or box_room_pillar.
        #[arg(long)]
        primitive: Option<String>,
        /// `key=value` override, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[command(flatten)]
        out: Out,
    },
    /// Fit the field to a scene directory.
    Train {
        #[arg(long)]
        scene: PathBuf,
        /// Key-value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// full or tiny.
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Train in double precision.
        #[arg(long)]
        f64: bool,
        #[command(flatten)]
        out: Out,
    },
    /// Extract the zero level set as a PLY mesh in original scene units.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Grid cells per axis (default 256, or 64 for the tiny preset).
        #[arg(long)]
        resolution: Option<usize>,
        #[command(flatten)]
        out: Out,
    },
    /// Accuracy, completeness, precision, recall and F-score of a mesh.
    EvalMesh {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Distance threshold in scene units.
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        /// Surface samples per mesh.
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
        #[command(flatten)]
        out: Out,
    },
    /// Angular error of rendered normals against ground truth.
    EvalNormals {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Comma-separated view indices (default all).
        #[arg(long)]
        views: Option<String>,
        #[command(flatten)]
        out: Out,
    },
    /// Render color, normal and depth for scene views, with PSNR.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        views: Option<String>,
        /// Also dump weight profiles for every N-th pixel.
        #[arg(long, value_name = "N")]
        weights_stride: Option<usize>,
        #[command(flatten)]
        out: Out,
    },
    /// Write the prior-check mask of a checkpoint as images.
    DumpMasks {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene with labels, for per-label counts.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Also score one pixel against its check neighbors (needs --scene).
        #[arg(long = "pixel", value_name = "VIEW,X,Y")]
        pixels: Vec<String>,
        #[command(flatten)]
        out: Out,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::MakeSynthetic { .. } => "make-synthetic",
            Command::Train { .. } => "train",
            Command::Extract { .. } => "extract",
            Command::EvalMesh { .. } => "eval-mesh",
            Command::EvalNormals { .. } => "eval-normals",
            Command::Render { .. } => "render",
            Command::DumpMasks { .. } => "dump-masks",
        }
    }

    fn out(&self) -> &Out {
        match self {
            Command::MakeSynthetic { out, .. }
            | Command::Train { out, .. }
            | Command::Extract { out, .. }
            | Command::EvalMesh { out, .. }
            | Command::EvalNormals { out, .. }
            | Command::Render { out, .. }
            | Command::DumpMasks { out, .. } => out,
        }
    }
}

fn configure_workers() -> Result<()> {
    let Ok(text) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Validation(format!("{WORKERS_ENV} must be a positive integer, got '{text}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Resource(format!("cannot start {n} workers: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    configure_workers()?;
    let mut run = Run::start(cli.command.name(), &cli.command.out().out, cli.overwrite, cli.seed)?;
    match &cli.command {
        Command::MakeSynthetic { spec, primitive, set, .. } => commands::make_synthetic(
            &mut run,
            SyntheticArgs {
                spec: spec.as_deref(),
                primitive: primitive.as_deref(),
                set,
                seed: cli.seed,
            },
        )?,
        Command::Train {
            scene,
            config,
            preset,
            set,
            resume,
            f64,
            ..
        } => commands::train_cmd(
            &mut run,
            TrainArgs {
                scene,
                config: config.as_deref(),
                preset: *preset,
                set,
                seed: cli.seed,
                resume: resume.as_deref(),
                double: *f64,
            },
        )?,
        Command::Extract { checkpoint, resolution, .. } => commands::extract(&mut run, checkpoint, *resolution)?,
        Command::EvalMesh {
            pred, gt, tau, samples, ..
        } => commands::eval_mesh_cmd(&mut run, pred, gt, *tau, *samples, cli.seed.unwrap_or(0))?,
        Command::EvalNormals {
            checkpoint, scene, views, ..
        } => commands::eval_normals(&mut run, checkpoint, scene, views.as_deref())?,
        Command::Render {
            checkpoint,
            scene,
            views,
            weights_stride,
            ..
        } => commands::render(&mut run, checkpoint, scene, views.as_deref(), *weights_stride)?,
        Command::DumpMasks {
            checkpoint, scene, pixels, ..
        } => commands::dump_masks(&mut run, checkpoint, scene.as_deref(), pixels)?,
    }
    run.finish()?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.code());
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
