use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use treekey_cli::commands::{cmd_run, cmd_tree, cmd_validate, CliError, RunFlags};
use treekey_cli::scenario::parse_time_secs;

/// Deterministic simulator for secure group communication over a
/// spanning-tree overlay.
#[derive(Parser)]
#[command(name = "treekey", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print a summary.
    Run {
        /// Scenario file.
        scenario: PathBuf,
        /// Write the event trace to this path.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the throughput CSV to this path.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Throughput window in seconds.
        #[arg(long, default_value = "1.0")]
        window: String,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the spanning tree and neighbor tables of the initial topology.
    Tree {
        /// Scenario file.
        scenario: PathBuf,
    },
    /// Parse and statically check a scenario.
    Validate {
        /// Scenario file.
        scenario: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout();
    match cli.command {
        Command::Run {
            scenario,
            trace,
            metrics,
            window,
            seed,
        } => {
            let window = parse_time_secs(&window)
                .filter(|w| w.as_micros() > 0)
                .ok_or_else(|| CliError::Input(format!("invalid window {window:?}")))?;
            let flags = RunFlags {
                trace,
                metrics,
                window,
                seed,
            };
            cmd_run(&scenario, &flags, &mut stdout)
        }
        Command::Tree { scenario } => cmd_tree(&scenario, &mut stdout),
        Command::Validate { scenario } => cmd_validate(&scenario, &mut stdout),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
