//! Experiment manifests: what was run, with which settings, and the SHA-256
//! of every file it wrote.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// When set, replaces both wall-clock stamps so reruns emit identical manifests.
pub const SOURCE_DATE_EPOCH: &str = "SOURCE_DATE_EPOCH";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChecksum {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDigest {
    pub law: String,
    pub pass: bool,
    /// SHA-256 of the report's JSON file.
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub seed_base: u64,
    pub grid: Option<Vec<f64>>,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
    pub reports: Vec<ReportDigest>,
    pub outputs: Vec<FileChecksum>,
}

/// Wall clock in whole seconds, or the pinned value of `SOURCE_DATE_EPOCH`.
pub fn wall_clock(pinned: Option<&str>) -> Result<u64> {
    match pinned {
        Some(raw) => raw
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SOURCE_DATE_EPOCH} must be an integer, got `{raw}`"))),
        None => Ok(SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)),
    }
}

/// Output directory that records a checksum for every file written into it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileChecksum>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(root.display().to_string(), e))?;
        Ok(Self {
            root,
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Renders into memory, then writes the file and records its checksum.
    pub fn write(&mut self, name: &str, render: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = Vec::new();
        render(&mut buf)?;
        let path = self.root.join(name);
        std::fs::write(&path, &buf).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.files.push(FileChecksum {
            path: name.to_string(),
            bytes: buf.len() as u64,
            sha256: sha256_hex(&buf),
        });
        Ok(path)
    }

    pub fn files(&self) -> &[FileChecksum] {
        &self.files
    }

    pub fn checksum(&self, name: &str) -> Option<&FileChecksum> {
        self.files.iter().find(|f| f.path == name)
    }

    /// Writes `manifest.json`; it is not listed in its own outputs.
    pub fn finish(self, mut manifest: ExperimentManifest) -> Result<PathBuf> {
        manifest.outputs = self.files;
        let path = self.root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::io("manifest", e))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(path)
    }
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: invalid manifest: {e}", path.display())))
    }

    /// Listed files in `dir` whose contents no longer match their checksum.
    pub fn mismatches(&self, dir: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|f| match std::fs::read(dir.join(&f.path)) {
                Ok(bytes) => sha256_hex(&bytes) != f.sha256,
                Err(_) => true,
            })
            .map(|f| f.path.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn pinned_clock() {
        assert_eq!(wall_clock(Some("1700000000")).unwrap(), 1_700_000_000);
        assert!(wall_clock(Some("soon")).is_err());
        assert!(wall_clock(None).unwrap() > 1_600_000_000);
    }

    #[test]
    fn records_and_verifies_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path().join("run")).unwrap();
        out.write("a.csv", |b| {
            b.extend_from_slice(b"t,x\n");
            Ok(())
        })
        .unwrap();
        assert_eq!(out.checksum("a.csv").unwrap().bytes, 4);
        let root = out.root().to_path_buf();
        let manifest = ExperimentManifest {
            tool: "hysterion".into(),
            version: "0".into(),
            command: "test".into(),
            config: RunConfig::default(),
            seed_base: 0,
            grid: None,
            started_at: 0,
            finished_at: 0,
            reports: vec![],
            outputs: vec![],
        };
        let path = out.finish(manifest).unwrap();
        let loaded = ExperimentManifest::load(&path).unwrap();
        assert_eq!(loaded.outputs.len(), 1);
        assert!(loaded.mismatches(&root).is_empty());
        std::fs::write(root.join("a.csv"), "changed").unwrap();
        assert_eq!(loaded.mismatches(&root), vec!["a.csv".to_string()]);
    }
}
