//! Run manifest and atomic file output.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

impl OutputFile {
    pub fn new(path: String, contents: &[u8]) -> Self {
        OutputFile { path, sha256: hex::encode(Sha256::digest(contents)), bytes: contents.len() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentRecord {
    pub name: String,
    pub kind: String,
    pub seed: u64,
    /// `pass`, `fail` or `error`.
    pub status: String,
    pub verdict: serde_json::Value,
    pub outputs: Vec<OutputFile>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub workers: usize,
    pub config: serde_json::Value,
    pub experiments: Vec<ExperimentRecord>,
    pub pass: bool,
}

impl RunManifest {
    pub fn new(config: serde_json::Value, seed: u64, workers: usize, experiments: Vec<ExperimentRecord>, pass: bool) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            workers,
            config,
            experiments,
            pass,
        }
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
