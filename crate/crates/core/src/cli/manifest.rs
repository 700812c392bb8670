//! Run manifest, artifact checksums and atomic writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: BTreeMap<String, String>,
    pub code_version: String,
    pub wall_time_s: f64,
    pub completed: bool,
    pub artifacts: Vec<Artifact>,
    pub verdicts: BTreeMap<String, serde_json::Value>,
    /// Checkpoint state of an interrupted sweep or classification.
    #[serde(default)]
    pub progress: serde_json::Value,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: BTreeMap<String, String>) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            config,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: 0.0,
            completed: false,
            artifacts: Vec::new(),
            verdicts: BTreeMap::new(),
            progress: serde_json::Value::Null,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn store(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST), serde_json::to_string_pretty(self)?.as_bytes())
    }

    /// Records (or replaces) the checksum of `dir/name`.
    pub fn record(&mut self, dir: &Path, name: &str) -> Result<()> {
        let sha256 = file_sha256(&dir.join(name))?;
        self.artifacts.retain(|a| a.name != name);
        self.artifacts.push(Artifact { name: name.to_string(), sha256 });
        Ok(())
    }

    pub fn checksum_of(&self, name: &str) -> Option<&str> {
        self.artifacts.iter().find(|a| a.name == name).map(|a| a.sha256.as_str())
    }

    /// Fails with `ChecksumMismatch` if any recorded artifact is missing or altered.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let path = dir.join(&a.name);
            let actual = file_sha256(&path).map_err(|_| Error::ChecksumMismatch(format!("{} is missing", a.name)))?;
            if actual != a.sha256 {
                return Err(Error::ChecksumMismatch(format!("{}: expected {}, found {actual}", a.name, a.sha256)));
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    tmp.set_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn round_trip_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "g,e\n1,2\n").unwrap();
        let mut m = RunManifest::new("sweep", BTreeMap::new());
        m.record(dir.path(), "a.csv").unwrap();
        m.store(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        back.verify(dir.path()).unwrap();
        fs::write(dir.path().join("a.csv"), "g,e\n1,3\n").unwrap();
        assert!(matches!(back.verify(dir.path()), Err(Error::ChecksumMismatch(_))));
        fs::remove_file(dir.path().join("a.csv")).unwrap();
        assert!(matches!(back.verify(dir.path()), Err(Error::ChecksumMismatch(_))));
    }
}
