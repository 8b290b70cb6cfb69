//! Run manifests: a JSON record in every output directory naming the
//! tool version, the command, the seeds, and SHA-256 hashes of the
//! inputs, sufficient to re-run the job bit-for-bit in serialized mode.
//!
//! The manifest is written with status "running" before work starts and
//! finalized on exit, so a crash leaves evidence rather than nothing.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Tool name and crate version.
    pub tool: String,
    /// Subcommand or experiment kind that produced the directory.
    pub command: String,
    /// "running", "ok", or "failed: <reason>".
    pub status: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: Option<u64>,
    pub seeds: Vec<u64>,
    /// Hash of the effective configuration text, when one was parsed.
    pub config_sha256: Option<String>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

fn now_unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn sha256_file(path: &Path) -> Result<String, ManifestError> {
    Ok(sha256_hex(&fs::read(path)?))
}

impl Manifest {
    /// A fresh manifest in the "running" state, stamped with the start
    /// time.
    pub fn begin(tool: &str, command: &str, seeds: Vec<u64>) -> Manifest {
        Manifest {
            tool: tool.to_string(),
            command: command.to_string(),
            status: "running".to_string(),
            started_unix_ms: now_unix_ms(),
            finished_unix_ms: None,
            seeds,
            config_sha256: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Records an input file by name and content hash.
    pub fn add_input(&mut self, path: &Path) -> Result<(), ManifestError> {
        self.inputs.push(FileHash {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Records an output file by name and content hash.
    pub fn add_output(&mut self, path: &Path) -> Result<(), ManifestError> {
        self.outputs.push(FileHash {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn finish_ok(&mut self) {
        self.status = "ok".to_string();
        self.finished_unix_ms = Some(now_unix_ms());
    }

    pub fn finish_failed(&mut self, reason: &str) {
        self.status = format!("failed: {reason}");
        self.finished_unix_ms = Some(now_unix_ms());
    }

    /// Writes `manifest.json` into the directory, replacing any prior
    /// version.
    pub fn write(&self, dir: &Path) -> Result<(), ManifestError> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Manifest, ManifestError> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_matches_the_published_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn manifest_round_trips_and_finalizes() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("scene.bin");
        fs::write(&input, b"abc").unwrap();

        let mut m = Manifest::begin("navlab 0.1.0", "train", vec![1, 2, 3]);
        m.add_input(&input).unwrap();
        m.write(dir.path()).unwrap();

        let running = Manifest::read(dir.path()).unwrap();
        assert_eq!(running.status, "running");
        assert_eq!(running.finished_unix_ms, None);
        assert_eq!(running.inputs[0].sha256, sha256_hex(b"abc"));

        m.finish_ok();
        m.write(dir.path()).unwrap();
        let done = Manifest::read(dir.path()).unwrap();
        assert_eq!(done.status, "ok");
        assert!(done.finished_unix_ms.is_some());
        assert_eq!(done.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn failures_are_recorded_not_erased() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::begin("navlab 0.1.0", "exp", vec![7]);
        m.finish_failed("budget must be positive");
        m.write(dir.path()).unwrap();
        let read = Manifest::read(dir.path()).unwrap();
        assert_eq!(read.status, "failed: budget must be positive");
    }
}
