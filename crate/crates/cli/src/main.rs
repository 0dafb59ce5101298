use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use damagescan::stages::{Stage, Workspace};
use damagescan::{PipelineConfig, Result};
use damagescan_core::classifier::TrainingConfig;

/// Building damage assessment from multi-temporal point clouds.
#[derive(Debug, Parser)]
#[command(name = "damagescan", version)]
struct Cli {
    /// TOML config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Shift every configured seed by K.
    #[arg(long, global = true, value_name = "K")]
    seed_override: Option<u64>,
    /// Output directory, overriding `paths.out_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Training data tag, overriding `training_config`.
    #[arg(long, global = true, value_parser = parse_training_config)]
    training_config: Option<TrainingConfig>,
    /// Print the fully resolved config and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate scenes and scan both epochs.
    Simulate,
    /// Per-point features around each building.
    Features,
    /// Feature change between the epochs.
    Change,
    /// Changed-point extraction and building vectors.
    Cluster,
    /// Train the random forest.
    Train,
    /// Grade the evaluation buildings.
    Classify,
    /// Confusion matrix and metrics.
    Evaluate,
    /// Cross-source feature robustness and radius selection.
    RobustSelect,
    /// All stages in order.
    FullRun,
}

fn parse_training_config(s: &str) -> std::result::Result<TrainingConfig, String> {
    s.parse().map_err(|e: damagescan_core::Error| e.to_string())
}

fn resolve(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(k) = cli.seed_override {
        cfg.override_seeds(k);
    }
    if let Some(d) = &cli.out_dir {
        cfg.paths.out_dir = d.clone();
    }
    if let Some(t) = cli.training_config {
        cfg.training_config = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        eprintln!("no subcommand given; see --help");
        return Ok(());
    };
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let ws = Workspace::new(cfg);
    let stage = match command {
        Command::Simulate => Stage::Simulate,
        Command::Features => Stage::Features,
        Command::Change => Stage::Change,
        Command::Cluster => Stage::Cluster,
        Command::Train => Stage::Train,
        Command::Classify => Stage::Classify,
        Command::Evaluate => Stage::Evaluate,
        Command::RobustSelect => Stage::RobustSelect,
        Command::FullRun => return ws.full_run(),
    };
    ws.run(stage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
