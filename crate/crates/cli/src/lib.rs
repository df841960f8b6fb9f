//! Library side of the `opcal` command: CSV ingestion, model files and the
//! subcommand implementations. `main.rs` only parses arguments.

pub mod benchmark;
pub mod commands;
pub mod error;
pub mod io;
pub mod model;

pub use error::{CliError, Result};
