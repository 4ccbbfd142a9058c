use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{data, CliResult};

/// Reproducibility record written next to every run's outputs. Contains no
/// timestamps so that identical runs produce identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub config: &'a C,
    /// Input path to hex SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash<C: Serialize>(config: &C) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serializes"))
}

pub fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

pub fn write<C: Serialize>(
    path: &Path,
    command: &str,
    config: &C,
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: &[&str],
) -> CliResult {
    let mut digests = BTreeMap::new();
    for p in inputs {
        digests.insert(p.display().to_string(), file_digest(p)?);
    }
    let manifest = Manifest {
        tool: "dforge",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_hash: config_hash(config),
        seed,
        config,
        inputs: digests,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))
}
