use std::process::ExitCode;

use clap::Parser;
use moving_targets::cli::{cmd_grid, cmd_run, cmd_validate, Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Grid(args) => cmd_grid(args),
        Command::Validate { config } => match cmd_validate(config) {
            Ok(diags) if diags.is_empty() => {
                println!("ok");
                return ExitCode::SUCCESS;
            }
            Ok(diags) => {
                for d in diags {
                    println!("{d}");
                }
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
    };
    match outcome {
        Ok(s) if s.failed == 0 => {
            log::info!("{} cells ok", s.cells);
            ExitCode::SUCCESS
        }
        Ok(s) => {
            log::error!("{} of {} cells failed", s.failed, s.cells);
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
