//! `rentropy`: recursive-entropy probing, guided decoding, loop
//! trimming, replay, and capacity measurement, driven by a TOML
//! experiment config.
//!
//! Exit codes: 0 on success (per-item problems become status lines in
//! the artifacts), 2 on configuration or input errors, 3 when the
//! backend is unreachable.

mod bench;
mod commands;
mod config;
mod store;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use rentropy_attack::{AttackError, RunFailure};
use rentropy_backend::BackendError;

use config::LoadedConfig;

#[derive(Debug, Parser)]
#[command(
    name = "rentropy",
    version,
    about = "Recursive-entropy toolkit: probe decoding trajectories, steer them into loops, and measure the damage"
)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "rentropy.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render counterfactual prompt variants from a question file.
    Counterfactual(commands::counterfactual::CounterfactualArgs),
    /// Decode naturally and record recursive-entropy trajectories.
    Probe(commands::probe::ProbeArgs),
    /// Full pipeline: render, generate, anchor, guide into a loop, trim.
    Attack(commands::attack::AttackArgs),
    /// Re-trim stored runs into attack prompts.
    Trim(commands::trim::TrimArgs),
    /// Replay trimmed prompts and score the outputs.
    Replay(commands::replay::ReplayArgs),
    /// Measure the serving-capacity impact of runaway requests.
    Bench(commands::bench::BenchArgs),
    /// Recompute trend analyses from stored records.
    Analyze(commands::analyze::AnalyzeArgs),
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = LoadedConfig::load(&cli.config)?;
    match &cli.command {
        Command::Counterfactual(args) => commands::counterfactual::run(args, &cfg),
        Command::Probe(args) => commands::probe::run(args, &cfg),
        Command::Attack(args) => commands::attack::run(args, &cfg),
        Command::Trim(args) => commands::trim::run(args, &cfg),
        Command::Replay(args) => commands::replay::run(args, &cfg),
        Command::Bench(args) => commands::bench::run(args, &cfg),
        Command::Analyze(args) => commands::analyze::run(args, &cfg),
    }
}

/// Did the failure bottom out in an unreachable backend?
fn unavailable(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        if let Some(e) = cause.downcast_ref::<BackendError>() {
            return commands::backend_unavailable(e);
        }
        if let Some(e) = cause.downcast_ref::<AttackError>() {
            return commands::attack_unavailable(e);
        }
        if let Some(f) = cause.downcast_ref::<RunFailure>() {
            return commands::attack_unavailable(&f.error);
        }
        false
    })
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(if unavailable(&e) { 3 } else { 2 });
    }
}
