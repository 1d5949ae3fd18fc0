//! Experiment harness for the scalar linear neural ODE: loss landscapes,
//! single training runs and method comparisons, written as CSV.

// Negated comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use args::{Cli, Command};
pub use error::{CliError, CliResult, EXIT_DIVERGED, EXIT_IO, EXIT_OK, EXIT_USAGE};

/// Runs a parsed command and returns the process exit code.
/// `command_line` is recorded verbatim in the manifest.
pub fn run(cli: &Cli, command_line: &str) -> CliResult<i32> {
    match &cli.command {
        Command::Landscape(a) => commands::landscape(a, command_line),
        Command::Train(a) => commands::train_cmd(a, command_line),
        Command::Compare(a) => commands::compare(a, command_line),
    }
}
