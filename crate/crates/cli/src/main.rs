//! Command-line driver: synthetic data generation, training, evaluation,
//! single-clip decoding and the gradient check, all reproducible per seed.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "v2c", version, about = "Video-to-command translation network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic demonstration dataset.
    Synth(commands::synth::SynthArgs),
    /// Train a model on an annotated dataset.
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint on a dataset and print the metric report.
    Eval(commands::eval::EvalArgs),
    /// Decode a single feature file with a checkpoint.
    Decode(commands::decode::DecodeArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Decode(args) => commands::decode::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
