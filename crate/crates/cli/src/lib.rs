//! Command implementations behind the `pmdk` binary.
//!
//! Every command is reproducible: all randomness flows from `--seed`
//! flags, outputs carry provenance JSON, and file formats are bit-exact.
//! A `--config` JSON can pre-set any flag; explicit flags win.

pub mod commands;
pub mod dataset_io;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "pmdk",
    about = "Point-map conditioned micro-diffusion pipeline",
    version
)]
pub struct Cli {
    /// Rayon worker threads (0: library default).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic dataset (scene, trajectory, LiDAR) to a directory.
    Synth(commands::synth::SynthArgs),
    /// Verify a dataset directory against its manifest hashes.
    Verify(commands::verify::VerifyArgs),
    /// Enumerate and filter training pairs by overlap.
    Pairs(commands::pairs::PairsArgs),
    /// Train the base denoiser or the conditional pathways.
    Train(commands::train::TrainArgs),
    /// Sample a target view conditioned on reference(s) and geometry.
    Sample(commands::sample::SampleArgs),
    /// Refine a candidate render through partial re-noising.
    Refine(commands::refine::RefineArgs),
    /// Move or duplicate points of a point map inside a 3-D box.
    Edit(commands::edit::EditArgs),
    /// Compare images (and optionally depths) into a metrics report.
    Eval(commands::eval::EvalArgs),
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global().ok();
    }
    match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Verify(args) => commands::verify::run(args),
        Command::Pairs(args) => commands::pairs::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Sample(args) => commands::sample::run(args),
        Command::Refine(args) => commands::refine::run(args),
        Command::Edit(args) => commands::edit::run(args),
        Command::Eval(args) => commands::eval::run(args),
    }
}
