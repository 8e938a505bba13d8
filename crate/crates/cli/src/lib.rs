//! Batch experiment driver for the `robust-fm` library. Every subcommand
//! reads one TOML config, writes its datasets plus `manifest.json` into the
//! output directory and reports a one-line JSON status record.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::Parser;
use serde_json::json;

use commands::{execute, Command, Run};
use config::ExperimentConfig;
use error::CliError;
use output::{Format, OutDir};

#[derive(Debug, Parser)]
#[command(name = "robust-fm", version, about = "Robust gain allocation for FM power control under adding-edge attacks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment config; defaults apply to every missing key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// RNG seed (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Concurrent sweep points (overrides `workers`).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Dataset file format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

pub fn run(cli: &Cli) -> Result<serde_json::Value, CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(w) = cli.workers {
        config.workers = Some(w);
    }
    let setup = config.setup()?;
    let mut run = Run::new(OutDir::create(&setup.config.out_dir, cli.format)?);
    let result = execute(cli.command, &setup, &mut run);
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    // The manifest is written even when the command fails part-way.
    let manifest = run.manifest(cli.command, &setup);
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("serializable");
    bytes.push(b'\n');
    run.out.write("manifest.json", &bytes)?;
    result?;
    Ok(json!({
        "status": "ok",
        "command": cli.command.name(),
        "out_dir": setup.config.out_dir,
        "outputs": run.out.written,
    }))
}

