//! Command-line front end for robust QLR inference: configuration, data
//! ingestion, single tests, confidence sets by test inversion and Monte
//! Carlo rejection curves.

pub mod commands;
pub mod config;
pub mod error;
pub mod study;

pub use commands::{run, Command, Output};
pub use config::{Flags, RunConfig};
pub use error::{CliError, CliResult};
