//! Driver for the `r4t` command-line tool.
//!
//! Every subcommand reads and writes artifacts under one output directory:
//!
//! | file | producer |
//! |------|----------|
//! | `world/` (`db.r4te`, `centers.r4te`, `vocab.r4te`, `queries.r4te`, `queries.csv`) | `world-gen` |
//! | `policy0.r4tp`, `policy.r4tp`, `trace.csv` | `train-folm` |
//! | `dataset.r4ts` | `synth` |
//! | `denoiser.r4td`, `diffusion_loss.csv` | `train-diffusion` |
//! | `samples.r4ts`, `decoded.csv` | `sample` |
//! | `metrics.csv`, `summary.txt` | `eval` |
//! | `latency.csv`, `latency.svg` | `bench` |
//!
//! `manifest.txt` records the config digest and a content hash for each of them.

pub mod config;
pub mod manifest;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;
pub use stages::{run_stage, Context};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] r4t::Error),

    #[error("config error{}: {message}", line_suffix(.line))]
    Config { line: Option<usize>, message: String },

    #[error("missing {path}; run `r4t {producer}` first")]
    Missing { path: String, producer: &'static str },

    #[error(
        "{path} was written under config digest {found} but the current config digest is {expected}; \
         rerun the producing stage or pass --force"
    )]
    DigestMismatch {
        path: String,
        expected: String,
        found: String,
    },
}

fn line_suffix(line: &Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

impl CliError {
    /// 2 for malformed files or config text, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_format() => 2,
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "r4t", version, about = "Reward-trained fan-out retrieval over synthetic embedding worlds")]
pub struct Cli {
    /// Flat `key = value` config file; omitted keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Overrides the `seed` key.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Artifact directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    /// Skip the manifest digest check in `eval`.
    #[arg(long, global = true)]
    pub force: bool,

    /// Run single-threaded. Every stage already is, so this only exists for
    /// script compatibility.
    #[arg(long, global = true)]
    pub serial: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the synthetic world.
    WorldGen,
    /// Train the fan-out policy with soft-PPO.
    TrainFolm,
    /// Harvest policy rollouts into a target-tensor dataset.
    Synth,
    /// Train the diffusion denoiser on the synthesized dataset.
    TrainDiffusion,
    /// Sample target tensors for the held-out queries and decode them.
    Sample,
    /// Compare every retrieval arm on the held-out queries.
    Eval,
    /// Time sequential fan-out against batched diffusion.
    Bench,
    /// world-gen, train-folm, synth, train-diffusion, sample and eval in order.
    Pipeline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::WorldGen => "world-gen",
            Command::TrainFolm => "train-folm",
            Command::Synth => "synth",
            Command::TrainDiffusion => "train-diffusion",
            Command::Sample => "sample",
            Command::Eval => "eval",
            Command::Bench => "bench",
            Command::Pipeline => "pipeline",
        }
    }
}

/// Stages run by `pipeline`.
pub const PIPELINE: [Command; 6] = [
    Command::WorldGen,
    Command::TrainFolm,
    Command::Synth,
    Command::TrainDiffusion,
    Command::Sample,
    Command::Eval,
];

/// Loads the config, applies overrides and runs the chosen subcommand.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let ctx = Context::new(cfg, cli.out.clone(), cli.force);
    match cli.command {
        Command::Pipeline => PIPELINE.iter().try_for_each(|&c| run_stage(&ctx, c)),
        c => run_stage(&ctx, c),
    }
}
