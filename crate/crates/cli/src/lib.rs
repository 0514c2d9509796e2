//! Runtime for the `rcdm` command: checkpoint containers, image grids,
//! layered configuration, run manifests and the experiment commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod grid;
pub mod manifest;

pub use error::{CliError, CliResult};
