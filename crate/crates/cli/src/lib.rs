//! `medqa` command-line tool: train and cross-validate the encoder
//! classifier, answer questions interactively from a checkpoint, and render
//! training-curve reports.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error. All subcommands are deterministic given their inputs and `--seed`
//! (wall-clock columns aside), and never overwrite artifacts without
//! `--force`.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(args) => commands::cmd_train(args),
        Command::Crossval(args) => commands::cmd_crossval(args),
        Command::Ask(args) => commands::cmd_ask(args),
        Command::Report(args) => commands::cmd_report(args),
    }
}

/// Parses argv and runs the chosen subcommand, returning the process exit
/// code. Clap handles its own exits for --help/--version (0) and malformed
/// invocations (2).
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => err.exit(),
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}
