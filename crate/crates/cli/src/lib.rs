//! Batch front end: TOML configuration, the `forward`, `gradcheck`,
//! `optimize` and `diagnose` commands, and their report files.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{run, Command, Outcome};
pub use config::RunConfig;
pub use error::{Category, CliError};
