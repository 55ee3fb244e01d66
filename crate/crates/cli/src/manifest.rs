use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Bumped whenever an output layout changes.
pub const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub contract_cli: &'static str,
    pub contract_core: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub format_version: u32,
    pub command: String,
    pub config_path: Option<String>,
    /// Hash of the resolved configuration, overrides included.
    pub config_sha256: String,
    pub seed: u64,
    pub versions: Versions,
    pub wall_time_seconds: f64,
    pub audits_passed: bool,
    pub outputs: Vec<OutputEntry>,
    /// Hash over the names and hashes of all numerical outputs; identical
    /// configuration and seed give an identical value.
    pub outputs_sha256: String,
}

/// Collects output files written under one directory.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    entries: Vec<OutputEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.entries.retain(|e| e.file != name);
        self.entries.push(OutputEntry {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.write(name, &text)
    }

    /// Runs a CSV writer into memory and stores the result.
    pub fn write_csv(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> contract_core::Result<()>,
    ) -> Result<PathBuf> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn entries(&self) -> &[OutputEntry] {
        &self.entries
    }

    pub fn finish(
        mut self,
        command: &str,
        config_path: Option<&Path>,
        config_sha256: String,
        seed: u64,
        wall_time_seconds: f64,
        audits_passed: bool,
    ) -> Result<Manifest> {
        self.entries.sort_by(|a, b| a.file.cmp(&b.file));
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.file.as_bytes());
            h.update([0]);
            h.update(e.sha256.as_bytes());
            h.update([b'\n']);
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            command: command.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            config_sha256,
            seed,
            versions: Versions {
                contract_cli: env!("CARGO_PKG_VERSION"),
                contract_core: contract_core::VERSION,
            },
            wall_time_seconds,
            audits_passed,
            outputs_sha256: h.finalize().iter().map(|b| format!("{b:02x}")).collect(),
            outputs: self.entries,
        };
        let path = self.root.join("manifest.json");
        let mut text = serde_json::to_vec_pretty(&manifest)?;
        text.push(b'\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}
