//! Library half of the `tdae` command: config parsing, image I/O and the
//! subcommand drivers. `main.rs` only parses arguments and maps errors to
//! exit codes.

pub mod commands;
pub mod config;
pub mod error;
pub mod image_io;

pub use commands::{Check, Output, ReportFormat};
pub use config::RunConfig;
pub use error::{CliError, Result};
