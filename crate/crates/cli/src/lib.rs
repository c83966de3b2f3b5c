//! Library side of the `tracefda` command: CSV ingestion, cross-validation,
//! scatter-pair files and the subcommands themselves.

pub mod commands;
pub mod crossval;
pub mod data;
pub mod error;
pub mod output;
pub mod pairfile;

pub use error::{CliError, CliResult};
