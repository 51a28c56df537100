//! Command-line driver for `scanflow`.
//!
//! The binary is a thin wrapper around [`run`]; every failure surfaces as a
//! [`CliError`] carrying the process exit code.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use args::{Cli, Command};
pub use config::Config;
pub use error::CliError;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if cli.strict {
        config.ingest.strict = true;
    }
    match &cli.command {
        Command::Detect(a) => commands::detect::run(config, a),
        Command::Evaluate(a) => commands::evaluate::run(config, a),
        Command::Bench(a) => commands::bench::run(config, a),
        Command::Synth(a) => commands::synth::run(config, a),
        Command::AggregatePackets(a) => commands::aggregate::run(config, a),
    }
}
