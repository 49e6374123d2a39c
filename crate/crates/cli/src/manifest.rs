//! Result bundles and the manifest that reproduces them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::csvio::write_file;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Effective configuration, with defaults, overrides and absolute input
    /// paths applied.
    pub config: String,
    #[serde(default)]
    pub inputs: Vec<FileDigest>,
    #[serde(default)]
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| {
            CliError::Config(format!("{}: {}", path.display(), e.to_string().trim_end()))
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// Files produced by one subcommand, kept in memory until written.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bundle {
    pub files: Vec<(String, Vec<u8>)>,
    pub inputs: Vec<PathBuf>,
}

impl Bundle {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_owned(), bytes));
    }

    pub fn input(&mut self, path: PathBuf) {
        self.inputs.push(path);
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    }

    /// Writes every file plus the manifest into `dir`.
    pub fn write(&self, dir: &Path, command: &str, seed: u64, config: &str) -> Result<Manifest> {
        let mut inputs = Vec::new();
        for p in &self.inputs {
            let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
            inputs.push(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_hex(&bytes),
            });
        }
        let mut outputs = Vec::new();
        for (name, bytes) in &self.files {
            write_file(&dir.join(name), bytes)?;
            outputs.push(FileDigest {
                path: name.clone(),
                sha256: sha256_hex(bytes),
            });
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.to_owned(),
            seed,
            config_sha256: sha256_hex(config.as_bytes()),
            config: config.to_owned(),
            inputs,
            outputs,
        };
        write_file(&dir.join(MANIFEST_FILE), manifest.to_toml().as_bytes())?;
        Ok(manifest)
    }
}
