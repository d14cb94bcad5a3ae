use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Command, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory when the file lives inside it.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub seed: u64,
    pub config: RunConfig,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Files written by a run, kept in the order they were produced.
#[derive(Debug, Default)]
pub struct ArtifactLog {
    files: Vec<PathBuf>,
}

impl ArtifactLog {
    pub fn record(&mut self, path: PathBuf) {
        if !self.files.contains(&path) {
            self.files.push(path);
        }
    }

    pub fn finish(self, out: &Path) -> anyhow::Result<Vec<Artifact>> {
        let mut artifacts = self
            .files
            .iter()
            .map(|p| {
                let shown = p.strip_prefix(out).unwrap_or(p);
                Ok(Artifact {
                    path: shown.to_string_lossy().replace('\\', "/"),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(artifacts)
    }
}

pub fn resolve(out: &Path, artifact: &Artifact) -> PathBuf {
    let p = Path::new(&artifact.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}
