//! `metric-chain`: simulate, tokenize, train, decode and evaluate
//! multi-metric prediction chains from one TOML config.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};

use crate::commands::ArtifactMismatch;
use crate::config::{Loaded, Overrides};

#[derive(Parser)]
#[command(name = "metric-chain", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Beam width (also the Step 2 candidate width unless configured).
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// Bins per numerical metric.
    #[arg(long, global = true)]
    tokens: Option<usize>,
    /// `percentile` or `linear`.
    #[arg(long, global = true)]
    strategy: Option<metric_chain::Strategy>,
    /// `order-mr`, `order-c2f` or `file:PATH`.
    #[arg(long, global = true)]
    order_preset: Option<String>,
    /// Comma-separated metric names.
    #[arg(long, global = true)]
    query: Option<String>,
    #[arg(long, global = true)]
    teacher_forced: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its train/dev/test split.
    Simulate,
    /// Fit one codec per metric on the training split.
    FitCodecs,
    /// Train the sequence model.
    Train,
    /// Decode the configured split.
    Decode,
    /// Score predictions against the ground truth.
    Evaluate,
    /// Rank metrics by their average decoding position.
    OrderTrace,
    /// Quantize→dequantize error for both strategies at T and 2T.
    ReconStudy,
    /// Every step above in order.
    Run,
}

fn run(cli: Cli) -> Result<()> {
    let path = cli
        .config
        .ok_or_else(|| anyhow!("--config PATH is required"))?;
    let overrides = Overrides {
        seed: cli.seed,
        beam: cli.beam,
        tokens: cli.tokens,
        strategy: cli.strategy,
        order_preset: cli.order_preset,
        query: cli
            .query
            .map(|q| q.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()),
        teacher_forced: cli.teacher_forced,
    };
    let loaded = Loaded::load(&path, &overrides)?;
    match cli.command {
        Command::Simulate => commands::simulate(&loaded),
        Command::FitCodecs => commands::fit_codecs(&loaded),
        Command::Train => commands::train(&loaded),
        Command::Decode => commands::run_decode(&loaded),
        Command::Evaluate => commands::evaluate(&loaded).map(|_| ()),
        Command::OrderTrace => commands::order_trace(&loaded),
        Command::ReconStudy => commands::recon_study(&loaded),
        Command::Run => commands::run_all(&loaded),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<ArtifactMismatch>()) {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
