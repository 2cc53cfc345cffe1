use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tameflow_cli::{list_presets, run, RunOptions};

#[derive(Parser)]
#[command(name = "tameflow", version, about = "Price flows, deflator valuation and hedging experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the task described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `noise.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides `noise.paths`.
        #[arg(long)]
        paths: Option<usize>,
    },
    /// List built-in markets and claims.
    Presets,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            seed,
            threads,
            paths,
        } => {
            let code = run(&RunOptions {
                config,
                out,
                seed,
                threads,
                paths,
            });
            ExitCode::from(code as u8)
        }
        Command::Presets => {
            print!("{}", list_presets());
            ExitCode::SUCCESS
        }
    }
}
