//! JSON-lines run manifests. Line one describes the run (subcommand plus
//! every resolved parameter, defaults included); each further line records an
//! input or output artifact with its content hash, so a run can be audited
//! and reproduced bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA: &str = "rtgp-run/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactRole {
    Input,
    Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ManifestLine {
    Run {
        schema: String,
        subcommand: String,
        parameters: BTreeMap<String, serde_json::Value>,
    },
    Artifact {
        role: ArtifactRole,
        name: String,
        path: String,
        sha256: String,
        bytes: u64,
    },
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Accumulates manifest lines during a run and writes them atomically at the
/// end, so a failed run leaves no manifest at all.
pub struct ManifestWriter {
    lines: Vec<ManifestLine>,
}

impl ManifestWriter {
    pub fn new(subcommand: &str, parameters: BTreeMap<String, serde_json::Value>) -> Self {
        Self {
            lines: vec![ManifestLine::Run {
                schema: MANIFEST_SCHEMA.to_string(),
                subcommand: subcommand.to_string(),
                parameters,
            }],
        }
    }

    pub fn record_input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.record(ArtifactRole::Input, name, path)
    }

    pub fn record_output(&mut self, name: &str, path: &Path) -> Result<()> {
        self.record(ArtifactRole::Output, name, path)
    }

    fn record(&mut self, role: ArtifactRole, name: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.lines.push(ManifestLine::Artifact {
            role,
            name: name.to_string(),
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for line in &self.lines {
            out.extend_from_slice(&serde_json::to_vec(line).expect("manifest line serializes"));
            out.push(b'\n');
        }
        super::atomic_write(path, &out)
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestLine>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(idx, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                offset: idx as u64,
                message: format!("manifest line {}: {e}", idx + 1),
            })
        })
        .collect()
}
