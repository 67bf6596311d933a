use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Where the effective seed came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedSource {
    Flag,
    Environment,
    Default,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub source: SeedSource,
}

/// Provenance record written next to every report.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 over the effective parameters and the bytes of every input file.
    pub config_digest: String,
    pub params: serde_json::Value,
    pub inputs: Vec<String>,
    pub seeds: SeedRecord,
    pub tool_version: String,
    pub wall_time_secs: f64,
}

/// Accumulates the digest input for a run.
pub struct DigestBuilder {
    hasher: Sha256,
    inputs: Vec<String>,
}

impl DigestBuilder {
    pub fn new(command: &str, params_json: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        hasher.update([0u8]);
        hasher.update(params_json.as_bytes());
        DigestBuilder {
            hasher,
            inputs: Vec::new(),
        }
    }

    /// Hash a file, or every regular file of a directory in name order.
    /// File names enter the digest relative to `path`, so moving the
    /// inputs elsewhere keeps it stable.
    pub fn add_path(&mut self, path: &Path) -> std::io::Result<()> {
        self.inputs.push(path.display().to_string());
        if path.is_dir() {
            let mut entries: Vec<_> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            for p in entries {
                let name = p
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                self.hasher.update([1u8]);
                self.hasher.update(name.as_bytes());
                self.hasher.update([0u8]);
                self.hasher.update(normalise_newlines(&std::fs::read(&p)?));
            }
        } else {
            self.hasher.update([2u8]);
            self.hasher
                .update(normalise_newlines(&std::fs::read(path)?));
        }
        Ok(())
    }

    pub fn finish(self) -> (String, Vec<String>) {
        let bytes = self.hasher.finalize();
        (
            bytes.iter().map(|b| format!("{b:02x}")).collect(),
            self.inputs,
        )
    }
}

/// CRLF and LF checkouts of the same text hash identically.
fn normalise_newlines(bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\r' && bytes.get(i + 1) == Some(&b'\n') {
            i += 1;
            continue;
        }
        out.push(bytes[i]);
        i += 1;
    }
    out
}
