//! Per-command run manifests: resolved arguments, seeds, file digests and
//! wall-clock bounds, written as `<command>.manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(FileDigest {
            path: path.display().to_string(),
            bytes: data.len() as u64,
            sha256: hex::encode(Sha256::digest(&data)),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub args: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Collects what a command touched; [`Recorder::finish`] hashes everything
/// and writes the manifest next to the outputs.
pub struct Recorder {
    command: &'static str,
    args: serde_json::Value,
    seed: Option<u64>,
    started: f64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn start<A: Serialize>(command: &'static str, args: &A, seed: Option<u64>) -> Result<Self> {
        Ok(Recorder {
            command,
            args: serde_json::to_value(args)?,
            seed,
            started: unix_now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    pub fn finish(self, out_dir: &Path) -> Result<PathBuf> {
        let digest = |ps: &[PathBuf]| ps.iter().map(|p| FileDigest::of(p)).collect::<Result<Vec<_>>>();
        let m = RunManifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            args: self.args,
            seed: self.seed,
            threads: rayon::current_num_threads(),
            inputs: digest(&self.inputs)?,
            outputs: digest(&self.outputs)?,
            started_unix: self.started,
            finished_unix: unix_now(),
        };
        let path = out_dir.join(format!("{}.manifest.json", self.command));
        fs::write(&path, serde_json::to_string_pretty(&m)?)?;
        let back: RunManifest = serde_json::from_str(&fs::read_to_string(&path)?)
            .with_context(|| format!("re-reading {}", path.display()))?;
        ensure!(back.outputs == m.outputs, "manifest {} did not round-trip", path.display());
        Ok(path)
    }
}
