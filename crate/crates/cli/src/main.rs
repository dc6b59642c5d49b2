use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;
mod engine;
mod runlog;

use args::Cli;
use commands::Failure;

fn main() -> ExitCode {
    // clap exits with 2 on bad arguments and 0 for --help/--version
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
