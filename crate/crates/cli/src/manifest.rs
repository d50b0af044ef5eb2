use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::Failure;

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Record of one subcommand run: the effective configuration, the hash of
/// every input file and the seed. Contains no timestamps so that identical
/// runs write identical manifests.
#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a RunConfig,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

pub fn write(cfg: &RunConfig, command: &str, inputs: &[&Path], outputs: &[&str]) -> Result<(), Failure> {
    let mut hashes = BTreeMap::new();
    for p in inputs {
        // work-directory files are keyed relative to it
        let key = p.strip_prefix(&cfg.work_dir).unwrap_or(p);
        hashes.insert(key.display().to_string(), sha256_file(p)?);
    }
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg,
        inputs: hashes,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let path = cfg.path(&format!("{command}.manifest.json"));
    let mut text = serde_json::to_string_pretty(&m).map_err(|e| Failure::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}
