//! Run manifests: resolved configuration, input digests, output paths and
//! timings, written as JSON next to each run's artifacts.

use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

#[derive(Serialize)]
pub struct FileDigest {
    pub path: String,
    pub fnv1a64: String,
}

#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
    pub wall_ms: u128,
}

pub struct ManifestBuilder {
    manifest: Manifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64) -> Self {
        ManifestBuilder {
            manifest: Manifest {
                command: command.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                config: serde_json::Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
                wall_ms: 0,
            },
            started: Instant::now(),
        }
    }

    pub fn config(&mut self, config: impl Serialize) -> anyhow::Result<()> {
        self.manifest.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.manifest.inputs.push(FileDigest {
            path: path.display().to_string(),
            fnv1a64: format!("{:016x}", fnv1a64(&bytes)),
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    pub fn write(mut self, path: &Path) -> anyhow::Result<()> {
        self.manifest.wall_ms = self.started.elapsed().as_millis();
        let json = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
