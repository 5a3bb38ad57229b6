//! One JSON manifest per artifact-producing command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub started: String,
    /// Resolved configuration (model, train, data and command flags).
    pub config: Value,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    /// Artifacts relative to the run directory.
    pub outputs: Vec<String>,
    /// Command-specific results.
    pub summary: Value,
    #[serde(skip)]
    dir: PathBuf,
}

impl RunManifest {
    /// Starts a manifest for a run writing into `dir`, creating it.
    pub fn begin(command: &str, dir: &Path, seed: u64, threads: usize) -> CliResult<Self> {
        std::fs::create_dir_all(dir)?;
        if threads != 1 {
            log::info!("--threads {threads} recorded; the engine always runs single-threaded");
        }
        Ok(Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            threads,
            started: chrono::Utc::now().to_rfc3339(),
            config: Value::Null,
            timings: BTreeMap::new(),
            outputs: Vec::new(),
            summary: Value::Null,
            dir: dir.to_path_buf(),
        })
    }

    pub fn path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    /// Path of an artifact inside the run directory, recorded in the outputs.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    /// Runs `f`, recording its duration under `label`.
    pub fn timed<O>(&mut self, label: &str, f: impl FnOnce() -> O) -> O {
        let t0 = Instant::now();
        let out = f();
        self.timings.insert(label.to_string(), t0.elapsed().as_secs_f64());
        out
    }

    pub fn write(&self) -> CliResult<PathBuf> {
        let path = self.path();
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}
