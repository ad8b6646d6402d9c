//! Command-line front end for the structured-light scanning pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

use std::path::PathBuf;

use crate::error::CliResult;
use crate::report::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Simulate,
    Calibrate,
    Fuse,
    Reconstruct,
    Register,
    Evaluate,
}

/// Loads the configuration and runs `command`. A `config` key among the
/// overrides stands in for `config_path`.
pub fn run(command: Command, config_path: Option<PathBuf>, overrides: &[String], env_seed: Option<&str>) -> CliResult<RunReport> {
    let mut pairs = config::parse_overrides(overrides)?;
    let mut path = config_path;
    if let Some(i) = pairs.iter().position(|(k, _)| k == "config") {
        path = Some(PathBuf::from(pairs.remove(i).1));
    }
    let cfg = config::load(path.as_deref(), &pairs, env_seed)?;
    match command {
        Command::Simulate => commands::cmd_simulate(&cfg),
        Command::Calibrate => commands::cmd_calibrate(&cfg),
        Command::Fuse => commands::cmd_fuse(&cfg),
        Command::Reconstruct => commands::cmd_reconstruct(&cfg),
        Command::Register => commands::cmd_register(&cfg),
        Command::Evaluate => commands::cmd_evaluate(&cfg),
    }
}
