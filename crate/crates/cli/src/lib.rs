//! Command-line driver for the `a3d` toolkit.
//!
//! Each subcommand writes its outputs plus a `<command>.manifest.json`
//! recording the fully resolved arguments; `a3d rerun --manifest <file>`
//! repeats the run and reproduces the outputs byte for byte.

pub mod args;
pub mod commands;
pub mod manifest;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] a3d::Error),
    #[error("bad manifest: {0}")]
    Manifest(String),
    /// The demo finished but its accuracy ordering did not hold.
    #[error("check failed: {0}")]
    Check(String),
}

pub mod exit {
    pub const SUCCESS: i32 = 0;
    /// Malformed command line; matches clap's own exit status.
    pub const USAGE: i32 = 2;
    pub const VALIDATION: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const IO: i32 = 5;
    pub const CHECK: i32 = 6;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(a3d::Error::Io { .. }) => exit::IO,
            CliError::Core(e) if e.is_numeric() => exit::NUMERIC,
            CliError::Core(_) | CliError::Manifest(_) => exit::VALIDATION,
            CliError::Check(_) => exit::CHECK,
        }
    }
}
