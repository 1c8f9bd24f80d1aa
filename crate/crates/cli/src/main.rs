use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use simgrasp::pipeline::{compare_runs, Pipeline, PipelineConfig, Stage, Variant, CONFIG_FILE};
use simgrasp::{Error, Result};

const EXIT_VALIDATION: u8 = 1;
const EXIT_MISSING_STAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "simgrasp", version, about = "Sim-to-real synthesis, detection and grasping pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML). Later stages default to the run's own copy.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Global seed; overrides the config.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// sim_only, no_adv or adversarial; overrides the config.
    #[arg(long, global = true, value_name = "NAME")]
    variant: Option<Variant>,

    /// Run directory; overrides the config.
    #[arg(long, global = true, value_name = "PATH")]
    run_dir: Option<PathBuf>,

    /// Overwrite an existing run directory or restart a stage from scratch.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test scenes and their renders.
    GenScenes,
    /// Train the layout-conditioned generator.
    TrainDiffusion,
    /// Produce one training image per training layout.
    Synthesize,
    /// Train the detector on the synthesized images.
    TrainDetector,
    /// Run the plain and complex grasp tiers.
    RunGrasp,
    /// Score the run, optionally alongside other completed runs.
    Evaluate {
        /// Further completed run directories to include in the report.
        others: Vec<PathBuf>,
        /// Only combine already evaluated runs into a report written here.
        #[arg(long, value_name = "PATH", conflicts_with = "run_dir")]
        compare_into: Option<PathBuf>,
    },
    /// All stages in order.
    Run,
    /// Print a config to start from.
    DefaultConfig {
        /// The reduced preset used for smoke runs.
        #[arg(long)]
        smoke: bool,
    },
}

fn resolve(common: &Common, fresh: bool) -> Result<(PipelineConfig, PathBuf)> {
    let run_dir_hint = common.run_dir.clone();
    let mut config = match (&common.config, &run_dir_hint) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(dir)) if !fresh && dir.join(CONFIG_FILE).exists() => PipelineConfig::load(&dir.join(CONFIG_FILE))?,
        _ => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(variant) = common.variant {
        config.variant = variant;
    }
    if let Some(dir) = run_dir_hint {
        config.run_dir = Some(dir);
    }
    let run_dir = config
        .run_dir
        .clone()
        .ok_or_else(|| Error::InvalidConfig("no run directory: pass --run-dir or set run_dir in the config".into()))?;
    config.validate()?;
    Ok((config, run_dir))
}

fn execute(cli: Cli) -> Result<()> {
    let stage = match &cli.command {
        Command::DefaultConfig { smoke } => {
            let cfg = if *smoke { PipelineConfig::smoke() } else { PipelineConfig::default() };
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
        Command::Evaluate {
            others,
            compare_into: Some(out),
        } => {
            let report = compare_runs(others, out)?;
            println!("{}", report.to_markdown());
            return Ok(());
        }
        Command::GenScenes => Some(Stage::GenScenes),
        Command::TrainDiffusion => Some(Stage::TrainDiffusion),
        Command::Synthesize => Some(Stage::Synthesize),
        Command::TrainDetector => Some(Stage::TrainDetector),
        Command::RunGrasp => Some(Stage::RunGrasp),
        Command::Evaluate { .. } => Some(Stage::Evaluate),
        Command::Run => None,
    };
    let fresh = matches!(stage, None | Some(Stage::GenScenes));
    let (config, run_dir) = resolve(&cli.common, fresh)?;
    let pipeline = Pipeline::new(config, run_dir, cli.common.force)?;
    match (stage, &cli.command) {
        (None, _) => pipeline.run_all(),
        (Some(Stage::Evaluate), Command::Evaluate { others, .. }) if !others.is_empty() => {
            pipeline.evaluate_with(others).map(|_| ())
        }
        (Some(stage), _) => pipeline.run_stage(stage),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::MissingStage { .. } => ExitCode::from(EXIT_MISSING_STAGE),
                _ => ExitCode::from(EXIT_VALIDATION),
            }
        }
    }
}
