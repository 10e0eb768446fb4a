use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Loaded;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: String,
    config_sha256: &'a str,
    /// Effective settings after command-line overrides.
    effective: serde_json::Value,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
}

/// Records what a command read and wrote. Paths are stored relative to
/// the config directory so manifests do not depend on where a run lives.
pub struct Recorder<'a> {
    loaded: &'a Loaded,
    command: &'a str,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl<'a> Recorder<'a> {
    pub fn new(loaded: &'a Loaded, command: &'a str) -> Self {
        Self {
            loaded,
            command,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) {
        self.inputs.push(path.into());
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.loaded.base_dir)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    }

    fn entries(&self, paths: &[PathBuf]) -> Result<Vec<FileEntry>> {
        paths
            .iter()
            .map(|p| {
                Ok(FileEntry {
                    path: self.relative(p),
                    sha256: file_hash(p)?,
                })
            })
            .collect()
    }

    /// Writes `manifest-<command>.json` into the output directory.
    pub fn finish(self) -> Result<PathBuf> {
        let c = &self.loaded.config;
        let effective = serde_json::json!({
            "seed": c.seed,
            "tokenizer": c.tokenizer,
            "model": c.model,
            "decode": c.decode,
            "simulate": c.simulate,
        });
        let m = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config: self.relative(&self.loaded.path),
            config_sha256: &self.loaded.file_hash,
            effective,
            inputs: self.entries(&self.inputs)?,
            outputs: self.entries(&self.outputs)?,
        };
        let path = c.paths.output_dir.join(format!("manifest-{}.json", self.command));
        std::fs::create_dir_all(&c.paths.output_dir)?;
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
