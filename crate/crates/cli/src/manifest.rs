//! Run manifests: what ran, on which inputs, producing which outputs.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliResult, Failure};

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Timing {
    wall_clock_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampler_seconds: Option<f64>,
    /// Steps 7 to 9 of structural-zero runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    augmentation_seconds: Option<f64>,
}

#[derive(Serialize)]
pub struct Manifest {
    format_version: u32,
    command: String,
    software_version: String,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<String>,
    /// Kept apart so that everything else is reproducible byte for byte.
    timing: Option<Timing>,
    #[serde(skip)]
    sampler_seconds: Option<f64>,
    #[serde(skip)]
    augmentation_seconds: Option<f64>,
}

fn digest(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    let hash = Sha256::digest(&bytes);
    Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            format_version: hdprisk::io::FORMAT_VERSION,
            command: command.to_string(),
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timing: None,
            sampler_seconds: None,
            augmentation_seconds: None,
        }
    }

    /// Record the digest of the file given to `flag`.
    pub fn input(&mut self, flag: &str, path: &Path) -> CliResult {
        let sha256 = digest(path).map_err(|e| Failure::Input(format!("{flag} {}: {e}", path.display())))?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn config(&mut self, config: serde_json::Value) {
        self.config = config;
    }

    pub fn sampler_timing(&mut self, sampler_seconds: f64, augmentation_seconds: Option<f64>) {
        self.sampler_seconds = Some(sampler_seconds);
        self.augmentation_seconds = augmentation_seconds;
    }

    pub fn finish(mut self, path: &Path, started: Instant) -> CliResult {
        self.timing = Some(Timing {
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            sampler_seconds: self.sampler_seconds,
            augmentation_seconds: self.augmentation_seconds,
        });
        let body = serde_json::to_string_pretty(&self).expect("manifest serialises") + "\n";
        hdprisk::io::write_atomic(path, body.as_bytes())
            .map_err(|e| Failure::Input(format!("writing {}: {e}", path.display())))
    }
}
