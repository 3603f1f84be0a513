//! Output handling: atomic writes, content hashing, and the experiment
//! manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestOutput {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// A record of one command invocation: the resolved configuration, seeds,
/// written files with content hashes, and wall-clock timings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    pub config: serde_json::Value,
    pub outputs: Vec<ManifestOutput>,
    pub timings_ms: BTreeMap<String, f64>,
}

/// Writes `bytes` to `<path>.partial`, then renames over `path`, so a
/// crash never leaves a truncated file under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    std::fs::write(&partial, bytes)
        .with_context(|| format!("cannot write {}", partial.display()))?;
    std::fs::rename(&partial, path)
        .with_context(|| format!("cannot rename {} into place", partial.display()))?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects command outputs into a directory and finishes with a manifest.
pub struct OutputTracker {
    dir: PathBuf,
    outputs: Vec<ManifestOutput>,
    timings: BTreeMap<String, f64>,
}

impl OutputTracker {
    pub fn new(dir: &Path) -> Result<OutputTracker> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(OutputTracker { dir: dir.to_path_buf(), outputs: Vec::new(), timings: BTreeMap::new() })
    }

    pub fn path_of(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Atomically writes one output file and records its hash. Re-writing
    /// the same name replaces the earlier record.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.outputs.retain(|o| o.path != name);
        self.outputs.push(ManifestOutput {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    /// Runs a closure and records its wall-clock time under `label`.
    pub fn time<T>(&mut self, label: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.record_time(label, start.elapsed());
        Ok(out)
    }

    /// Records an externally measured duration under `label`.
    pub fn record_time(&mut self, label: &str, elapsed: std::time::Duration) {
        self.timings.insert(label.to_string(), elapsed.as_secs_f64() * 1e3);
    }

    /// Writes the manifest and consumes the tracker.
    pub fn finish(
        mut self,
        command: &str,
        seed: u64,
        threads: usize,
        config: serde_json::Value,
    ) -> Result<()> {
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = ExperimentManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.to_string(),
            seed,
            threads,
            config,
            outputs: self.outputs,
            timings_ms: self.timings,
        };
        let bytes = serde_json::to_vec_pretty(&manifest)?;
        write_atomic(&self.dir.join(MANIFEST_NAME), &bytes)
    }
}
