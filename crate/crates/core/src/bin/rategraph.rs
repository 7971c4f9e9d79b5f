use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use rategraph::pipeline::{self, parse_models, PipelineConfig, Stage};
use rategraph::{Error, Result};

/// Star-rating prediction from review-graph structure.
#[derive(Parser)]
#[command(name = "rategraph", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw review files into the edge interchange file
    Ingest(Common),
    /// Generate a synthetic review graph instead of ingesting one
    Synth(Common),
    /// Temporal train/validation/test split with node closure
    Split(Common),
    /// Compute pair features on the training graph
    Featurize(Common),
    /// Fit the configured models
    Train(Common),
    /// Score every model on every split
    Evaluate(Common),
    /// Degree, rating, component and time statistics as CSV
    Stats(Common),
    /// Render the metric tables
    Report(Common),
    /// Every stage from synth or ingest through report
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`)
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Keep only the first N edges in time order
    #[arg(long)]
    limit: Option<usize>,
    /// Worker threads for parallel sections
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated model list (overrides `models`)
    #[arg(long)]
    models: Option<String>,
    /// Master seed (overrides `seed`)
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        if let Some(n) = self.limit {
            cfg.limit = Some(n);
            cfg.entries.insert("limit".into(), n.to_string());
        }
        if let Some(n) = self.workers {
            cfg.workers = Some(n);
        }
        if let Some(m) = &self.models {
            cfg.models = parse_models(m)?;
            cfg.entries.insert("models".into(), m.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
            cfg.entries.insert("seed".into(), s.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let (stage, common) = match &cli.command {
        Command::Ingest(c) => (Some(Stage::Ingest), c),
        Command::Synth(c) => (Some(Stage::Synth), c),
        Command::Split(c) => (Some(Stage::Split), c),
        Command::Featurize(c) => (Some(Stage::Featurize), c),
        Command::Train(c) => (Some(Stage::Train), c),
        Command::Evaluate(c) => (Some(Stage::Evaluate), c),
        Command::Stats(c) => (Some(Stage::Stats), c),
        Command::Report(c) => (Some(Stage::Report), c),
        Command::Run(c) => (None, c),
    };
    let cfg = common.config()?;
    match stage {
        Some(s) => {
            pipeline::run_stage_with_workers(s, &cfg)?;
        }
        None => pipeline::run_all(&cfg)?,
    }
    if matches!(stage, None | Some(Stage::Report)) {
        let text = std::fs::read_to_string(pipeline::report_path(&cfg)).map_err(Error::Io)?;
        print!("{text}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
