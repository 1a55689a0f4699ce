//! `cfnerf` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cfnerf::config::RunConfig;
use cfnerf::diff::GradCheckOptions;
use cfnerf::pipeline::{
    cmd_evaluate, cmd_gradcheck, cmd_interpolate, cmd_render, cmd_train, run_notes, CameraSpec,
    RenderOptions,
};
use cfnerf::scenes::RayDataset;
use cfnerf::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cfnerf",
    version,
    about = "Probabilistic radiance fields with conditional flows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults are used for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dot-path override, e.g. `train.batch_rays=64`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone)]
struct CameraArgs {
    /// Camera JSON (pose + focal, or azimuth on a rig).
    #[arg(long, conflicts_with = "dataset")]
    camera: Option<PathBuf>,
    /// Take the camera of a dataset view instead.
    #[arg(long, requires = "view")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    view: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoints, the training log and the effective config.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Render color, depth and variance maps from a checkpoint.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        camera: CameraArgs,
        /// Latent samples per pixel.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Render frames along a line between two prior latents.
    Interpolate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        camera: CameraArgs,
        /// Seeds of the two endpoint latents.
        #[arg(long, num_args = 2, value_names = ["S1", "S2"])]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 8)]
        frames: usize,
    },
    /// Finite-difference check of the full training loss gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Check at most this many coordinates per parameter tensor.
        #[arg(long)]
        max_coords: Option<usize>,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_io() {
        4
    } else if e.is_numeric()
        || matches!(
            e,
            Error::Shape { .. } | Error::MissingGradient(_) | Error::UnknownParameter(_)
        )
    {
        3
    } else {
        2
    }
}

fn resolve(common: &Common) -> Result<RunConfig, Error> {
    let base = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn camera_spec(args: &CameraArgs) -> Result<CameraSpec, Error> {
    match (&args.camera, &args.dataset, args.view) {
        (Some(path), None, _) => CameraSpec::load(path),
        (None, Some(dir), Some(view)) => CameraSpec::from_view(&RayDataset::load(dir)?, view),
        _ => Err(Error::Config(vec![
            "give --camera PATH or --dataset DIR --view N".into(),
        ])),
    }
}

fn options(cfg: &RunConfig, samples: Option<usize>) -> RenderOptions {
    let mut opts = RenderOptions::from_config(cfg);
    if let Some(k) = samples {
        opts.samples = k;
    }
    opts
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("json value")
    );
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Train { common } => {
            let cfg = resolve(&common)?;
            let outcome = cmd_train(&cfg)?;
            let last = outcome.records.last();
            print_json(&serde_json::json!({
                "checkpoint": outcome.checkpoint,
                "dataset": outcome.dataset_dir,
                "steps": outcome.records.len(),
                "first_nll": outcome.records.first().map(|r| r.nll),
                "last_nll": last.map(|r| r.nll),
            }));
        }
        Command::Render {
            common,
            checkpoint,
            camera,
            samples,
        } => {
            let cfg = resolve(&common)?;
            let spec = camera_spec(&camera)?;
            cmd_render(&checkpoint, &spec, &options(&cfg, samples), &cfg.out_dir)?;
            println!("{}", cfg.out_dir.display());
        }
        Command::Evaluate {
            common,
            checkpoint,
            dataset,
            samples,
        } => {
            let cfg = resolve(&common)?;
            let notes = notes_for(&checkpoint, &cfg);
            let eval = cmd_evaluate(
                &checkpoint,
                &dataset,
                &options(&cfg, samples),
                cfg.train.bandwidth,
                notes,
                &cfg.out_dir,
            )?;
            print_json(&serde_json::to_value(&eval.report).expect("report serializes"));
        }
        Command::Interpolate {
            common,
            checkpoint,
            camera,
            seeds,
            frames,
        } => {
            let cfg = resolve(&common)?;
            let spec = camera_spec(&camera)?;
            let seeds = match seeds.as_slice() {
                [a, b] => (*a, *b),
                _ => (cfg.seed, cfg.seed.wrapping_add(1)),
            };
            cmd_interpolate(
                &checkpoint,
                &spec,
                seeds,
                frames,
                &options(&cfg, Some(1)),
                &cfg.out_dir,
            )?;
            println!("{}", cfg.out_dir.display());
        }
        Command::Gradcheck { common, max_coords } => {
            let cfg = resolve(&common)?;
            let mut opts = GradCheckOptions::default();
            if let Some(m) = max_coords {
                opts.max_coords_per_param = m;
            }
            let (report, loss) = cmd_gradcheck(&cfg, opts)?;
            let worst = report
                .params
                .iter()
                .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
            print_json(&serde_json::json!({
                "passed": report.passed,
                "max_rel_error": report.max_rel_error,
                "tolerance": report.tolerance,
                "loss": loss.total,
                "worst_param": worst.map(|p| p.name.clone()),
                "parameters": report.params.len(),
                "coordinates": report.params.iter().map(|p| p.checked).sum::<usize>(),
            }));
            if !report.passed {
                return Ok(3);
            }
        }
    }
    Ok(0)
}

/// Run notes from the config saved next to the checkpoint when present.
fn notes_for(checkpoint: &Path, fallback: &RunConfig) -> Vec<String> {
    let saved = checkpoint
        .parent()
        .map(|d| d.join(cfnerf::config::EFFECTIVE_CONFIG))
        .and_then(|p| RunConfig::load(&p).ok());
    run_notes(saved.as_ref().unwrap_or(fallback))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
