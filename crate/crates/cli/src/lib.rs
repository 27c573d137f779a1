//! Command-line front end: argument parsing, run manifests, image output
//! and the `repro` experiment grid.

pub mod alloc;
pub mod args;
mod commands;
pub mod data_spec;
pub mod manifest;
pub mod pnm;
pub mod repro;

use std::fmt;

pub use args::Cli;
use clap::Parser;

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations (exit 2).
    Usage(String),
    /// The command ran and failed (exit 1).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<fqln::Error> for CliError {
    fn from(e: fqln::Error) -> Self {
        match e {
            fqln::Error::Usage(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

/// Parses `argv` (without the program name) and runs the command.
/// Help and version requests print and return success.
pub fn run_args(argv: &[String]) -> Result<(), CliError> {
    let full = std::iter::once("fqln".to_string()).chain(argv.iter().cloned());
    match Cli::try_parse_from(full) {
        Ok(cli) => commands::run(&cli, argv),
        Err(e) if e.exit_code() == 0 => {
            let _ = e.print();
            Ok(())
        }
        Err(e) => Err(CliError::Usage(e.render().to_string())),
    }
}
