//! Command-line front end: argument parsing, configuration resolution, run
//! manifests and the subcommands.

pub mod args;
mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use args::Cli;
pub use commands::{CheckpointMeta, ComparisonRow, Source};
pub use error::{CliError, CliResult};

use args::Command;

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Forecast(a) => commands::forecast(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Sweep(a) => commands::sweep(a),
    }
}
