use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dnf_core::config::{PipelineConfig, Preset};
use dnf_core::dictionary::FitMode;
use dnf_core::pipeline::{ReferenceSplit, Run, Stage, CONFIG_FILE};
use dnf_core::{DnfError, Result};

#[derive(Parser, Debug)]
#[command(name = "dnf", version, about = "Train and sample decoupled shape/motion neural fields")]
struct Cli {
    /// Pipeline configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed for stage commands; sampling seed for the other commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Built-in configuration: paper or desk.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true, default_value = "runs/default")]
    run_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    SynthData,
    Prepare,
    TrainShape,
    TrainMotion,
    Decompose,
    FinetuneShape,
    FinetuneMotion,
    TrainShapeDiff,
    TrainMotionDiff,
    /// Run every stage in order, skipping completed ones.
    All,
    /// Generate mesh sequences into samples/<name>/.
    Sample {
        #[arg(long, default_value = "generated")]
        name: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Append frames to a generated sequence by out-painting.
    Extend {
        /// Sample directory name under samples/.
        #[arg(long, default_value = "generated")]
        from: String,
        #[arg(long)]
        id: String,
        #[arg(long, default_value_t = 4)]
        frames: usize,
        #[arg(long, default_value = "extended")]
        out: String,
    },
    /// Fit a watertight mesh and animate it.
    FitUnseen {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        /// `latent` (s only) or `latent_gamma` (s and coefficients).
        #[arg(long, default_value = "latent_gamma")]
        mode: String,
        #[arg(long, default_value = "fitted")]
        out: String,
    },
    /// Generation metrics of a sample directory against a reference split.
    Evaluate {
        #[arg(long)]
        gen: PathBuf,
        /// train, held_out or all.
        #[arg(long, default_value = "train")]
        reference: String,
    },
    /// Mean sequence Chamfer of the four reconstruction variants.
    ReconstructAblation {
        #[arg(long, default_value_t = 16)]
        frames: usize,
    },
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::SynthData => Stage::SynthData,
            Command::Prepare => Stage::Prepare,
            Command::TrainShape => Stage::TrainShape,
            Command::TrainMotion => Stage::TrainMotion,
            Command::Decompose => Stage::Decompose,
            Command::FinetuneShape => Stage::FinetuneShape,
            Command::FinetuneMotion => Stage::FinetuneMotion,
            Command::TrainShapeDiff => Stage::TrainShapeDiff,
            Command::TrainMotionDiff => Stage::TrainMotionDiff,
            _ => return None,
        })
    }
}

/// Opens the run directory, creating it (or replacing its config) when the
/// command line asks for a different configuration.
fn resolve_run(cli: &Cli, seed_into_config: bool) -> Result<Run> {
    let existing = cli.run_dir.join(CONFIG_FILE);
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(p), _) => PipelineConfig::load(p)?,
        (None, Some(p)) => PipelineConfig::preset(p.parse::<Preset>()?),
        (None, None) if existing.exists() => PipelineConfig::load(&existing)?,
        (None, None) => PipelineConfig::desk(),
    };
    if seed_into_config {
        if let Some(s) = cli.seed {
            cfg = cfg.with_seed(s);
        }
    }
    if existing.exists() && PipelineConfig::load(&existing)? == cfg {
        return Run::open(&cli.run_dir);
    }
    Run::create(&cli.run_dir, cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_mode(mode: &str) -> Result<FitMode> {
    match mode {
        "latent" => Ok(FitMode::LatentOnly),
        "latent_gamma" => Ok(FitMode::LatentAndGamma),
        other => Err(DnfError::Config(format!("unknown fit mode `{other}` (expected latent or latent_gamma)"))),
    }
}

fn sample_dir(run: &Run, name: &str) -> PathBuf {
    let p = Path::new(name);
    if p.is_absolute() || p.exists() {
        p.to_path_buf()
    } else {
        run.path("samples").join(name)
    }
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(stage) = cli.command.stage() {
        let run = resolve_run(cli, true)?;
        let outcome = run.run_stage(stage)?;
        if outcome.skipped {
            log::info!("{stage}: inputs unchanged, nothing to do");
        }
        return print_json(&outcome.report);
    }
    if matches!(cli.command, Command::All) {
        let run = resolve_run(cli, true)?;
        let reports: Vec<_> = run.run_all()?.into_iter().map(|o| o.report).collect();
        return print_json(&reports);
    }
    let run = resolve_run(cli, false)?;
    let seed = cli.seed.unwrap_or(run.config.seed);
    match &cli.command {
        Command::Sample { name, n, frames } => {
            let n = n.unwrap_or(run.config.eval.n_samples);
            let frames = frames.unwrap_or(run.config.eval.sample_frames);
            print_json(&run.sample(name, n, frames, seed)?)
        }
        Command::Extend { from, id, frames, out } => print_json(&run.extend(from, id, *frames, seed, out)?),
        Command::FitUnseen { mesh, frames, mode, out } => {
            print_json(&run.fit_unseen(mesh, *frames, seed, parse_mode(mode)?, out)?)
        }
        Command::Evaluate { gen, reference } => {
            let reference: ReferenceSplit = reference.parse()?;
            let report = run.evaluate(&sample_dir(&run, &gen.to_string_lossy()), reference, seed)?;
            print!("{}", report.to_csv());
            Ok(())
        }
        Command::ReconstructAblation { frames } => {
            let table = run.reconstruct_ablation(*frames)?;
            print!("{}", table.to_csv());
            Ok(())
        }
        _ => unreachable!("stage commands are handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
