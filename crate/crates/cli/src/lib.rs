//! Batch experiment runner: reads a JSON run config, runs one pipeline per
//! subcommand and writes deterministic CSV/JSON under
//! `<outdir>/<subcommand>/<config-hash>/`.

use std::path::PathBuf;

pub mod commands;
pub mod config;
pub mod output;

pub use config::{AuditSpec, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("bad argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Core(#[from] loopflow::Error),
}
