use std::process::ExitCode;

use adjoint_lab_cli::{execute, RunArgs, SEED_ENV};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adjoint-lab", version, about = "Adjoint sensitivity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write CSV and JSON results.
    Run(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env_seed = std::env::var(SEED_ENV).ok();
    match cli.command {
        Command::Run(args) => ExitCode::from(execute(&args, env_seed.as_deref())),
    }
}
