//! Output directory bookkeeping and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, ExperimentConfig, TOOL_NAME, TOOL_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Collects every file a command writes so the manifest can list them.
#[derive(Debug)]
pub struct Output {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Output {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, CliError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self {
            dir,
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Sorted inventory plus the manifest itself, named `<command>.manifest.json`.
    pub fn finish(
        mut self,
        command: &str,
        config: Option<&ExperimentConfig>,
        seeds: &[u64],
    ) -> Result<RunManifest, CliError> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let config_toml = config.map(ExperimentConfig::to_toml);
        let manifest = RunManifest {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            config_hash: config_toml.as_deref().map(|c| sha256_hex(c.as_bytes())),
            seeds: seeds.to_vec(),
            files: self.files.clone(),
            config: config_toml,
        };
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        self.write(&manifest_name(command), json.as_bytes())?;
        Ok(manifest)
    }
}

pub fn manifest_name(command: &str) -> String {
    format!("{command}.manifest.json")
}

/// Resolved configuration and output inventory of one command invocation.
/// No timestamps or paths outside the output directory, so reruns produce
/// the same bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: Option<String>,
    pub seeds: Vec<u64>,
    pub files: Vec<FileEntry>,
    pub config: Option<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// The embedded configuration, checked against its hash. Environment
    /// overrides are not reapplied.
    pub fn config(&self) -> Result<ExperimentConfig, CliError> {
        let text = self
            .config
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("{} manifest has no config", self.command)))?;
        if self.config_hash.as_deref() != Some(sha256_hex(text.as_bytes()).as_str()) {
            return Err(CliError::Config("manifest config hash mismatch".into()));
        }
        ExperimentConfig::from_toml_with_overrides(text, std::iter::empty())
    }
}
