use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FORMAT: &str = "stagecast-manifest/1";

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub role: String,
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(role: &str, path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io("manifest", path, e))?;
        let mut hex = String::with_capacity(64);
        for b in Sha256::digest(&bytes) {
            let _ = write!(hex, "{b:02x}");
        }
        Ok(Self {
            role: role.to_string(),
            path: path.display().to_string(),
            bytes: bytes.len() as u64,
            sha256: hex,
        })
    }
}

/// Everything needed to rerun a command: the resolved config plus digests of
/// what it read and wrote. Passing the manifest back as `--config` restores
/// the config.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub format: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: BTreeMap<&'static str, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            format: MANIFEST_FORMAT,
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config: config.pairs(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        self.inputs.push(FileDigest::of(role, path)?);
        Ok(())
    }

    pub fn output(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        self.outputs.push(FileDigest::of(role, path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<PathBuf, CliError> {
        write_json(path, self)?;
        Ok(path.to_path_buf())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::internal("output", e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io("output", path, e))
}
