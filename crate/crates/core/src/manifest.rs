//! Run manifests: what was run, with which seeds, on which inputs, and the
//! content digest of every file it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{QuantError, Result};
use crate::quantmodels::checkpoint::timestamp;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

pub fn sha256_bytes(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

pub fn sha256_file(path: &Path) -> Result<FileDigest> {
    let data = std::fs::read(path).map_err(|e| QuantError::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_bytes(&data),
        bytes: data.len() as u64,
    })
}

/// Digest of any serialisable configuration, via its JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_bytes(serde_json::to_string(config)?.as_bytes()))
}

/// Every file under `root` except manifests, with paths relative to `root`
/// using `/`, sorted.
pub fn digest_tree(root: &Path) -> Result<Vec<FileDigest>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
            QuantError::io(path, e.into())
        })?;
        if !entry.file_type().is_file() || entry.file_name() == MANIFEST_FILE {
            continue;
        }
        let mut d = sha256_file(entry.path())?;
        let rel = entry.path().strip_prefix(root).unwrap_or(entry.path());
        d.path = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        out.push(d);
    }
    Ok(out)
}

impl RunManifest {
    pub fn start(command: Vec<String>) -> Self {
        let now = timestamp();
        Self {
            command,
            tool_version: TOOL_VERSION.to_string(),
            config_hash: String::new(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            started_at: now.clone(),
            finished_at: now,
            timings: BTreeMap::new(),
        }
    }

    pub fn add_inputs(&mut self, paths: &[PathBuf]) -> Result<()> {
        for p in paths {
            if p.is_dir() {
                let base = p.display().to_string();
                self.inputs.extend(digest_tree(p)?.into_iter().map(|mut d| {
                    d.path = format!("{base}/{}", d.path);
                    d
                }));
            } else {
                self.inputs.push(sha256_file(p)?);
            }
        }
        Ok(())
    }

    /// Digests everything under `out_dir` and writes the manifest there.
    pub fn finish(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.artifacts = digest_tree(out_dir)?;
        self.finished_at = timestamp();
        let path = out_dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, json).map_err(|e| QuantError::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QuantError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
