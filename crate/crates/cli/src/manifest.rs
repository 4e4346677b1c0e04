//! `manifest.json`: the command line, resolved seed, config snapshot and
//! the SHA-256 of every artifact written by a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use sslab_core::Error;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Artifact {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub config: Option<String>,
    /// Keyed by path relative to the output directory.
    pub artifacts: BTreeMap<String, Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<Artifact, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Artifact {
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

pub struct ManifestBuilder {
    dir: PathBuf,
    manifest: Manifest,
}

impl ManifestBuilder {
    pub fn new(dir: &Path, command: &str) -> Self {
        Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                tool: "sslab".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                argv: std::env::args().collect(),
                seed: None,
                config: None,
                artifacts: BTreeMap::new(),
            },
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.manifest.seed = Some(seed);
        self
    }

    pub fn config(mut self, text: String) -> Self {
        self.manifest.config = Some(text);
        self
    }

    pub fn add(&mut self, path: &Path) -> Result<(), Error> {
        let rel = path
            .strip_prefix(&self.dir)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        self.manifest.artifacts.insert(rel, sha256_file(path)?);
        Ok(())
    }

    pub fn add_all<'a>(&mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<(), Error> {
        paths.into_iter().try_for_each(|p| self.add(p))
    }

    pub fn write(self) -> Result<PathBuf, Error> {
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
