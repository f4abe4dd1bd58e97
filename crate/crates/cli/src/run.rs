//! Per-command provenance: resolved config, config hash, timings and
//! artifact checksums, written as `run_<command>.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Serialize)]
struct Timing {
    phase: String,
    seconds: f64,
}

#[derive(Serialize)]
struct Artifact {
    path: PathBuf,
    sha256: String,
    bytes: u64,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    config_sha256: &'a str,
    seed: Option<u64>,
    threads: usize,
    parallel: bool,
    timings: &'a [Timing],
    total_seconds: f64,
    artifacts: &'a [Artifact],
}

pub struct Run {
    command: &'static str,
    out_dir: PathBuf,
    config: ExperimentConfig,
    config_sha256: String,
    timings: Vec<Timing>,
    artifacts: Vec<Artifact>,
    started: Instant,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

impl Run {
    pub fn start(command: &'static str, config: ExperimentConfig, out_dir: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
        let canonical = serde_json::to_vec(&config).map_err(CliError::internal)?;
        Ok(Run {
            command,
            out_dir,
            config,
            config_sha256: sha256_hex(&canonical),
            timings: Vec::new(),
            artifacts: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings.push(Timing {
            phase: phase.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }

    /// Records a file written by the command.
    pub fn artifact(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.artifacts.push(Artifact {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn finish(self) -> Result<(), CliError> {
        write_json(&self.out_dir.join(RESOLVED_CONFIG), &self.config)?;
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            config_sha256: &self.config_sha256,
            seed: self.config.seed,
            threads: current_threads(),
            parallel: dialect_id::par::is_parallel(),
            timings: &self.timings,
            total_seconds: self.started.elapsed().as_secs_f64(),
            artifacts: &self.artifacts,
        };
        write_json(&self.out_dir.join(format!("run_{}.json", self.command)), &manifest)
    }
}

#[cfg(feature = "parallel")]
fn current_threads() -> usize {
    rayon::current_num_threads()
}

#[cfg(not(feature = "parallel"))]
fn current_threads() -> usize {
    1
}
