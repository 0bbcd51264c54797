//! File formats, configuration and pipeline stages behind the `dctmc`
//! binary.
//!
//! A run is `generate → reconstruct → verify → report`, each stage reading
//! only the directory the previous one wrote. All matrices use the text
//! format in [`matrix_io`]; configuration and manifests are flat
//! `key = value` files ([`kv`]).

pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod kv;
pub mod matrix_io;

pub use config::RunConfig;
pub use error::{CliError, Result};
