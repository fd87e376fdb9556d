//! ghostforge: simulate bucket-detector measurements, reconstruct images
//! from them, and denoise the reconstructions.
//!
//! Every run resolves its configuration as flags > config file > defaults
//! and writes the result to `run-manifest.json` in the output directory;
//! feeding that manifest back through `--config` reproduces the run
//! bit-exactly. `GHOSTFORGE_THREADS` caps internal parallelism without
//! changing any output.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ghostforge_core::Error;

use commands::{denoise, evaluate, gen_dataset, reconstruct, simulate, train};

#[derive(Parser)]
#[command(name = "ghostforge", version, about = "Ghost-imaging simulation and denoising pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure an object image with a seeded pattern sequence
    Simulate(simulate::SimulateArgs),
    /// Reconstruct images from a measurement log
    Reconstruct(reconstruct::ReconstructArgs),
    /// Build a noisy/clean training dataset cache
    GenDataset(gen_dataset::GenDatasetArgs),
    /// Train the denoising network on a dataset cache
    Train(train::TrainArgs),
    /// Denoise one image with a trained checkpoint
    Denoise(denoise::DenoiseArgs),
    /// Score methods on a dataset split and render a comparison sheet
    Evaluate(evaluate::EvaluateArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate::resolve(&args).and_then(|c| simulate::run(&c)),
        Command::Reconstruct(args) => reconstruct::resolve(&args).and_then(|c| reconstruct::run(&c)),
        Command::GenDataset(args) => gen_dataset::resolve(&args).and_then(|c| gen_dataset::run(&c)),
        Command::Train(args) => train::resolve(&args).and_then(|c| train::run(&c)),
        Command::Denoise(args) => denoise::resolve(&args).and_then(|c| denoise::run(&c)),
        Command::Evaluate(args) => evaluate::resolve(&args).and_then(|c| evaluate::run(&c)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Build the global thread pool before any parallel work runs.
fn init_threads() -> Result<(), String> {
    match std::env::var("GHOSTFORGE_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| format!("GHOSTFORGE_THREADS must be a positive integer, got '{v}'"))?;
            if n == 0 {
                return Err("GHOSTFORGE_THREADS must be at least 1".into());
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| e.to_string())
        }
        Err(std::env::VarError::NotPresent) => Ok(()),
        Err(e) => Err(format!("GHOSTFORGE_THREADS: {e}")),
    }
}

/// 2 = configuration problem, 3 = data problem, 4 = runtime failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Contract(_) | Error::Shape(_) => 2,
        Error::Data(_)
        | Error::Load(_)
        | Error::StaleCache(_)
        | Error::DegenerateMeasurement(_)
        | Error::Io(_) => 3,
        Error::Train { .. } => 4,
    }
}
