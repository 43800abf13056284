//! `rap`: synthesize datasets, train, evaluate and estimate cluster counts.
//!
//! Verbosity comes from `RAP_LOG` (`error`, `warn`, `info`, `debug`).

mod commands;
mod manifest;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "rap", version, about = "Prototype-guided new-category discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded Gaussian-mixture dataset as JSONL.
    Synth(commands::SynthArgs),
    /// Train a model and write checkpoint, epoch log and run manifest.
    Train(commands::TrainArgs),
    /// Cluster a dataset with a trained encoder and report metrics.
    Eval(commands::EvalArgs),
    /// Estimate the number of clusters in a dataset.
    #[command(name = "estimate-k")]
    EstimateK(commands::EstimateKArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RAP_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::EstimateK(args) => commands::estimate_k(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
