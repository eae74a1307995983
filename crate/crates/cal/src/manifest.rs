//! Run manifests and output-directory handling.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub config: RunConfig,
    /// Input path to hex SHA-256 of its contents.
    pub input_hashes: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub wall_time_secs: f64,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, seeds: Vec<u64>) -> Result<Self> {
        let mut input_hashes = BTreeMap::new();
        for p in config.data.inputs() {
            input_hashes.insert(p.display().to_string(), file_sha256(p)?);
        }
        Ok(Self {
            command: command.into(),
            tool_version: TOOL_VERSION.into(),
            config_hash: config.hash(),
            config: config.clone(),
            input_hashes,
            seeds,
            wall_time_secs: 0.0,
            outputs: Vec::new(),
        })
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Output directory of one config: `<root>/<first 16 hex digits of its hash>`.
/// Files are claimed before a command runs so an existing result is never
/// overwritten silently.
pub struct RunDir {
    pub path: PathBuf,
    force: bool,
}

impl RunDir {
    pub fn for_config(root: &Path, config: &RunConfig, force: bool) -> Result<Self> {
        Self::at(root.join(&config.hash()[..16]), force)
    }

    pub fn at(path: PathBuf, force: bool) -> Result<Self> {
        std::fs::create_dir_all(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(Self { path, force })
    }

    /// Path for `name`, refusing an existing file unless forced.
    pub fn claim(&self, name: &str) -> Result<PathBuf> {
        let p = self.path.join(name);
        if p.exists() && !self.force {
            return Err(CliError::OutputExists { path: p });
        }
        Ok(p)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let p = self.claim(name)?;
        write_json(&p, value)?;
        Ok(p)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
