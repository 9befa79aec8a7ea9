//! Per-run output directories and their manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliResult;
use crate::OutputArgs;

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// `<root>/<command>-<UTC timestamp>-seed<seed>` unless `--run-dir` was given.
pub fn create(output: &OutputArgs, command: &str, seed: u64) -> CliResult<PathBuf> {
    let dir = match &output.run_dir {
        Some(d) => d.clone(),
        None => {
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
            output
                .output_root
                .join(format!("{command}-{stamp}-seed{seed}"))
        }
    };
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> CliResult<Self> {
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Enough to rerun the command and to check its inputs and outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the run directory.
    pub artifacts: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: Option<String>,
}

impl Manifest {
    pub fn start(command: &str, argv: &[String], seed: u64, config: serde_json::Value) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            argv: argv.to_vec(),
            seed,
            config,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            started_at: now(),
            finished_at: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Digests `names` inside `dir` and writes the manifest.
    pub fn finish(mut self, dir: &Path, names: &[&str]) -> CliResult<()> {
        self.artifacts = names
            .iter()
            .map(|n| {
                Ok(FileDigest {
                    path: n.to_string(),
                    sha256: sha256_file(&dir.join(n))?,
                })
            })
            .collect::<CliResult<_>>()?;
        self.finished_at = Some(now());
        self.write(dir)
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> CliResult<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(
            dir.join(MANIFEST),
        )?)?)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}
