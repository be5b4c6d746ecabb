use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, Seeds};

/// Files never listed among a directory's artifacts.
const UNHASHED: [&str; 2] = ["run.json", "timing.json"];

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct RunInfo<'a> {
    tool: &'static str,
    version: &'static str,
    format_version: u32,
    command: &'a str,
    config: &'a RunConfig,
    seeds: Seeds,
    inputs: BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
}

fn hash_tree(dir: &Path, prefix: &str, out: &mut BTreeMap<String, String>) -> anyhow::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = e.file_name().to_string_lossy().into_owned();
        let rel = if prefix.is_empty() {
            name.clone()
        } else {
            format!("{prefix}/{name}")
        };
        let path = e.path();
        if path.is_dir() {
            hash_tree(&path, &rel, out)?;
        } else if !UNHASHED.contains(&name.as_str()) {
            out.insert(rel, sha256_file(&path)?);
        }
    }
    Ok(())
}

/// Writes `<dir>/run.json` with the resolved config, seeds and the hashes
/// of every input and of every artifact under `dir`.
pub fn write_run_json(dir: &Path, command: &str, config: &RunConfig, inputs: &[&Path]) -> anyhow::Result<()> {
    let mut input_hashes = BTreeMap::new();
    for p in inputs {
        input_hashes.insert(p.display().to_string(), sha256_file(p)?);
    }
    let mut artifacts = BTreeMap::new();
    hash_tree(dir, "", &mut artifacts)?;
    let info = RunInfo {
        tool: "misbehave",
        version: env!("CARGO_PKG_VERSION"),
        format_version: misbehave::FORMAT_VERSION,
        command,
        config,
        seeds: config.seeds(),
        inputs: input_hashes,
        artifacts,
    };
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&info)?)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn write_timing(dir: &Path, timing: &BTreeMap<String, f64>) -> anyhow::Result<()> {
    let path = dir.join("timing.json");
    std::fs::write(&path, serde_json::to_string_pretty(timing)?)
        .with_context(|| format!("writing {}", path.display()))
}
