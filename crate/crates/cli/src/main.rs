//! `tapsim` command-line front end.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod args;
mod commands;
mod error;

use error::{CliError, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "tapsim", version, about = "Trait- and age-structured birth-death particle systems")]
struct Cli {
    /// Worker threads for replicate parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one or more trajectories.
    Simulate(commands::SimulateArgs),
    /// Tabulate the stable age density and averaged coefficients.
    Equilibrium(commands::EquilibriumArgs),
    /// Averaging and martingale diagnostics over simulated replicates.
    Diagnose(commands::DiagnoseArgs),
    /// Solve the cumulant equation; with --trajectories, compare Laplace functionals.
    Cumulant(commands::CumulantArgs),
    /// Extinction times of both examples and the dominating-diffusion bound.
    Extinction(commands::ExtinctionArgs),
    /// Data for one figure panel.
    ReproduceFigure(commands::FigureArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Equilibrium(a) => commands::equilibrium(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
        Command::Cumulant(a) => commands::cumulant(&a),
        Command::Extinction(a) => commands::extinction(&a),
        Command::ReproduceFigure(a) => commands::reproduce_figure(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError {
                code: EXIT_USAGE,
                kind: "usage",
                message: e.to_string().trim().to_string(),
            };
            eprintln!("{}", err.to_json());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code)
        }
    }
}
