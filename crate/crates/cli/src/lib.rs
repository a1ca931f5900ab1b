//! File formats, parallel execution and subcommands for the `cursor-attn` binary.

pub mod commands;
pub mod error;
pub mod exec;
pub mod formats;
pub mod image;
pub mod modelfile;

pub use error::{CliError, Result};
