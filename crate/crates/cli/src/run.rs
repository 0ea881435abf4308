//! Output directory handling: every artifact is written through a [`Run`],
//! which records its SHA-256 and finally writes `<command>.run.toml` with
//! the resolved config and its hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use spectral_codec::Result;

use crate::config::PipelineConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Run {
    pub out: PathBuf,
    pub config: PipelineConfig,
    command: &'static str,
    outputs: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    command: &'a str,
    config_sha256: String,
    outputs: &'a BTreeMap<String, String>,
    config: &'a PipelineConfig,
}

impl Run {
    pub fn new(out: PathBuf, config: PipelineConfig, command: &'static str) -> Result<Self> {
        std::fs::create_dir_all(&out)?;
        Ok(Self { out, config, command, outputs: BTreeMap::new() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.config.to_toml().as_bytes())
    }

    /// Writes `bytes` to `rel` (relative to the output directory).
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, bytes)?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let sidecar = Sidecar {
            command: self.command,
            config_sha256: self.config_hash(),
            outputs: &self.outputs,
            config: &self.config,
        };
        let path = self.out.join(format!("{}.run.toml", self.command));
        std::fs::write(&path, toml::to_string(&sidecar).expect("sidecar serializes"))?;
        Ok(path)
    }
}

/// Files in `dir` with extension `ext`, sorted by name.
pub fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    v.sort();
    Ok(v)
}

pub fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Fails with an i/o error naming the first path that does not exist.
pub fn require(paths: &[PathBuf]) -> Result<()> {
    if let Some(p) = paths.iter().find(|p| !p.exists()) {
        return Err(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} not found", p.display())).into());
    }
    Ok(())
}
