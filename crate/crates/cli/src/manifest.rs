//! Run manifests: version, resolved config echo, input checksums, outputs,
//! and wall clock, written atomically at the end of a run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::Failure;

#[derive(Debug, Serialize)]
pub struct InputChecksum {
    pub path: String,
    pub crc32: u32,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub command: String,
    pub config_echo: toml::Value,
    pub input_checksums: Vec<InputChecksum>,
    pub outputs: Vec<String>,
    /// Excluded from byte-reproducibility comparisons.
    pub wall_clock_secs: f64,
}

/// Collects inputs/outputs over a run and writes `manifest_<command>.toml`.
pub struct ManifestBuilder {
    command: String,
    started: Instant,
    inputs: Vec<InputChecksum>,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Record an input file and its CRC-32.
    pub fn input(&mut self, path: &Path) -> Result<(), Failure> {
        let bytes = std::fs::read(path)
            .map_err(|e| Failure::IoFormat(format!("input {}: {e}", path.display())))?;
        self.inputs.push(InputChecksum {
            path: path.display().to_string(),
            crc32: crc32fast::hash(&bytes),
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Serialize and atomically write the manifest.
    pub fn write<C: Serialize>(self, out_dir: &Path, config_echo: &C) -> Result<(), Failure> {
        let echo = toml::Value::try_from(config_echo)
            .map_err(|e| Failure::IoFormat(format!("config echo: {e}")))?;
        let manifest = RunManifest {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.clone(),
            config_echo: echo,
            input_checksums: self.inputs,
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        };
        let text = toml::to_string(&manifest)
            .map_err(|e| Failure::IoFormat(format!("manifest: {e}")))?;
        let path = out_dir.join(format!("manifest_{}.toml", self.command));
        frontdoor_core::io::atomic_write(&path, text.as_bytes()).map_err(Failure::from)
    }
}
