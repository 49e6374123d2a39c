//! Configuration, file formats and subcommands of the `cellflux` tool.
//!
//! Every subcommand reads one TOML config (see `docs/config.md`), runs one
//! top-level operation of `cellflux-core`, and writes CSV tables plus a
//! `manifest.toml` recording the effective config, its hash, the seed, the
//! tool version and the digest of every input and output file.

pub mod config;
pub mod csvio;
pub mod error;
pub mod manifest;
pub mod run;

pub use config::{load_config, parse_config, Command, RunConfig};
pub use error::{exit, CliError, Result};
pub use manifest::{Bundle, Manifest};
pub use run::{execute, rerun, run_to_dir, Outcome};
