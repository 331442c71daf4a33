mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use config::CliConfig;

#[derive(Parser)]
#[command(
    name = "afgeo",
    version,
    about = "Anchor-free cross-view object geo-localization on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config file; command-line flags override its keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Run directory for outputs.
    #[arg(long, global = true, value_name = "DIR", default_value = "run")]
    out: PathBuf,
    /// Checkpoint to load (train initializes from it; eval/infer/export-heatmap score it).
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Sample to render with export-heatmap.
    #[arg(long, global = true, value_name = "ID")]
    sample_id: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic pairs plus an annotations.jsonl manifest.
    GenData,
    /// Train a model; TSV loss log goes to stdout and logs/train.tsv.
    Train,
    /// Score held-out samples and print the accuracy table.
    Eval,
    /// Emit one CSV line per held-out sample: id and predicted box.
    Infer,
    /// Render the click encoding and spatial gate of one sample as PGM.
    ExportHeatmap,
    /// Run gradient, assignment, decode, census, and spot-value checks.
    Selftest,
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let mut cfg = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.as_path();
    let checkpoint = cli.checkpoint.as_deref();
    match cli.command {
        Command::GenData => commands::gen_data(&cfg, out)?,
        Command::Train => commands::train_cmd(&cfg, out, checkpoint)?,
        Command::Eval => commands::eval_cmd(&cfg, out, checkpoint)?,
        Command::Infer => commands::infer_cmd(&cfg, out, checkpoint)?,
        Command::ExportHeatmap => {
            let id = cli
                .sample_id
                .as_deref()
                .context("export-heatmap needs --sample-id")?;
            commands::export_heatmap(&cfg, out, checkpoint, id)?;
        }
        Command::Selftest => return commands::selftest_cmd(),
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
