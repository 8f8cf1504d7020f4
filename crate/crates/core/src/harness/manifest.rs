use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Stage seed of every repetition.
    pub seeds: Vec<u64>,
    pub wall_clock_seconds: f64,
    /// Files written by the stage, relative to the output directory.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: String,
    pub stages: BTreeMap<String, StageRecord>,
    /// SHA-256 of every listed output file.
    pub checksums: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(config: &str) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.to_string(),
            stages: BTreeMap::new(),
            checksums: BTreeMap::new(),
        }
    }

    pub fn path(out: &Path) -> PathBuf {
        out.join(MANIFEST_FILE)
    }

    /// The manifest in `out`, or a fresh one. A manifest written under a
    /// different configuration is an error: stages of one run must share it.
    pub fn open(out: &Path, config: &str) -> Result<Self> {
        let path = Self::path(out);
        if !path.exists() {
            return Ok(RunManifest::new(config));
        }
        let m = Self::load(&path)?;
        if m.config != config {
            return Err(Error::config(format!(
                "{} was written with a different configuration; use a fresh --out directory",
                path.display()
            )));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        let path = Self::path(out);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn record(&mut self, out: &Path, stage: &str, seeds: Vec<u64>, seconds: f64, files: Vec<String>) -> Result<()> {
        for f in &files {
            self.checksums.insert(f.clone(), sha256_file(&out.join(f))?);
        }
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                seeds,
                wall_clock_seconds: seconds,
                files,
            },
        );
        Ok(())
    }

    pub fn has_stage(&self, stage: &str) -> bool {
        self.stages.contains_key(stage)
    }

    /// Files whose checksum no longer matches (missing files included).
    pub fn verify(&self, out: &Path) -> Vec<String> {
        self.checksums
            .iter()
            .filter(|(f, sum)| sha256_file(&out.join(f.as_str())).map_or(true, |s| &s != *sum))
            .map(|(f, _)| f.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verify_flags_changed_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "x\n").unwrap();
        std::fs::write(dir.path().join("b.csv"), "y\n").unwrap();
        let mut m = RunManifest::new("seed = 1");
        m.record(dir.path(), "gen-data", vec![1], 0.0, vec!["a.csv".into(), "b.csv".into()]).unwrap();
        m.save(dir.path()).unwrap();
        let back = RunManifest::open(dir.path(), "seed = 1").unwrap();
        assert!(back.verify(dir.path()).is_empty());
        std::fs::write(dir.path().join("a.csv"), "z\n").unwrap();
        std::fs::remove_file(dir.path().join("b.csv")).unwrap();
        assert_eq!(back.verify(dir.path()), vec!["a.csv".to_string(), "b.csv".to_string()]);
        assert!(RunManifest::open(dir.path(), "seed = 2").is_err());
    }

    #[test]
    fn empty_input_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty");
        std::fs::write(&p, "").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
