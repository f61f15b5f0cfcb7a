//! Run directories: every artifact of one invocation plus a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{io_error, CliError};

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    rng: &'a str,
    threads: usize,
    seeds: &'a BTreeMap<String, u64>,
    artifacts: &'a [String],
}

pub struct RunDir {
    pub path: PathBuf,
    command: String,
    config_text: String,
    hash: String,
    threads: usize,
    seeds: BTreeMap<String, u64>,
    artifacts: Vec<String>,
}

pub fn config_hash(text: &str) -> String {
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

impl RunDir {
    /// Creates the run directory. Without an explicit path it is
    /// `runs/<command>-<first 12 hex digits of the config hash>`.
    pub fn create(command: &str, cfg: &RunConfig, threads: usize) -> Result<Self, CliError> {
        let config_text = toml::to_string(cfg)
            .map_err(|e| CliError::Runtime(format!("serializing config: {e}")))?;
        let hash = config_hash(&config_text);
        let path = cfg
            .run_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(format!("{command}-{}", &hash[..12])));
        fs::create_dir_all(&path).map_err(|e| io_error(&path, e))?;
        Ok(Self {
            path,
            command: command.to_string(),
            config_text,
            hash,
            threads,
            seeds: BTreeMap::new(),
            artifacts: Vec::new(),
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Records an artifact written by the caller.
    pub fn record(&mut self, path: &Path) {
        let rel = path.strip_prefix(&self.path).unwrap_or(path);
        self.artifacts.push(rel.display().to_string());
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let p = self.file(name);
        fs::write(&p, contents).map_err(|e| io_error(&p, e))?;
        self.record(&p);
        Ok(p)
    }

    /// Writes the resolved config and the manifest.
    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.write("config.toml", &self.config_text.clone())?;
        let manifest = Manifest {
            command: &self.command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: self.hash.clone(),
            rng: iwmf_core::rng::ALGORITHM,
            threads: self.threads,
            seeds: &self.seeds,
            artifacts: &self.artifacts,
        };
        let text = toml::to_string(&manifest)
            .map_err(|e| CliError::Runtime(format!("serializing manifest: {e}")))?;
        let p = self.file("manifest.toml");
        fs::write(&p, text).map_err(|e| io_error(&p, e))?;
        Ok(self.path)
    }
}
