//! Reproducibility manifests written next to every output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::records::write_json;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Everything needed to rerun a subcommand. Contains no timestamps; the
/// duration is the only field that changes between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub counts: BTreeMap<String, serde_json::Value>,
    pub duration_ms: f64,
}

pub fn sha256_file(path: &Path) -> io::Result<InputDigest> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    let sha256 = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(InputDigest { path: path.display().to_string(), sha256, bytes })
}

/// Collects manifest fields while a subcommand runs.
#[derive(Debug)]
pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, config: impl Serialize) -> ManifestBuilder {
        ManifestBuilder {
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                subcommand: subcommand.to_string(),
                config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                counts: BTreeMap::new(),
                duration_ms: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, name: &str, seed: u64) -> &mut Self {
        self.manifest.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.manifest.inputs.push(sha256_file(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.manifest.outputs.push(path.display().to_string());
        self
    }

    pub fn count(&mut self, name: &str, value: impl Serialize) -> &mut Self {
        self.manifest.counts.insert(name.to_string(), serde_json::to_value(value).unwrap_or_default());
        self
    }

    pub fn finish(mut self) -> RunManifest {
        self.manifest.duration_ms = self.started.elapsed().as_secs_f64() * 1000.0;
        self.manifest
    }

    pub fn write(self, path: &Path) -> Result<RunManifest> {
        let m = self.finish();
        write_json(path, &m)?;
        Ok(m)
    }
}

/// Manifest path for a single-file output: `<output>.manifest.json`.
pub fn sibling_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
