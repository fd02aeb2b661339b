//! Run manifests: one `run.json` per output directory recording what was
//! run and hashes of everything it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use jointrecon_core::io::{read_json, write_json};
use jointrecon_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: Vec<String>,
    /// Fully resolved arguments after config-file expansion.
    pub config: serde_json::Value,
    pub master_seed: u64,
    /// Input name → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub started: String,
    pub finished: String,
    /// Output path relative to the run directory → SHA-256.
    pub outputs: BTreeMap<String, String>,
    /// SHA-256 over the sorted `path\0hash\n` lines of `outputs`.
    pub content_hash: String,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::MissingInput(format!("{}: {e}", dir.display())))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::MissingInput(format!("{}: {e}", dir.display())))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(root, &p, out)?;
        } else if p.strip_prefix(root).map(|r| r != Path::new(MANIFEST_FILE)).unwrap_or(true) {
            out.push(p);
        }
    }
    Ok(())
}

/// Hashes every file under `dir` except the manifest itself.
pub fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).expect("walked under dir");
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            Ok((key, hash_file(p)?))
        })
        .collect()
}

pub fn content_hash(outputs: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (path, hash) in outputs {
        h.update(path.as_bytes());
        h.update([0]);
        h.update(hash.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// What a command knows before it runs; finished by [`RunRecord::write`].
pub struct RunRecord {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub master_seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub started: String,
}

impl RunRecord {
    pub fn new(command: &[String], config: &impl Serialize, master_seed: u64) -> Self {
        Self {
            command: command.to_vec(),
            config: serde_json::to_value(config).expect("arguments serialize"),
            master_seed,
            inputs: BTreeMap::new(),
            started: now(),
        }
    }

    pub fn input(&mut self, name: impl Into<String>, path: &Path) -> Result<()> {
        self.inputs.insert(name.into(), hash_file(path)?);
        Ok(())
    }

    /// Hashes the outputs in `dir` and writes its manifest.
    pub fn write(self, dir: &Path) -> Result<RunManifest> {
        let outputs = hash_outputs(dir)?;
        let m = RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: self.command,
            config: self.config,
            master_seed: self.master_seed,
            inputs: self.inputs,
            started: self.started,
            finished: now(),
            content_hash: content_hash(&outputs),
            outputs,
        };
        write_json(&m, &dir.join(MANIFEST_FILE))?;
        Ok(m)
    }
}

/// Re-reads a run directory's manifest and checks every recorded hash.
pub fn verify(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingInput(format!("no manifest at {}", path.display())));
    }
    let m: RunManifest = read_json(&path)?;
    let bad = |reason: String| Error::Format {
        path: path.clone(),
        reason,
    };
    let actual = hash_outputs(dir)?;
    if actual != m.outputs {
        let mut diff: Vec<&String> = actual
            .keys()
            .chain(m.outputs.keys())
            .filter(|k| actual.get(*k) != m.outputs.get(*k))
            .collect();
        diff.sort();
        diff.dedup();
        return Err(bad(format!("outputs differ from manifest: {diff:?}")));
    }
    if content_hash(&m.outputs) != m.content_hash {
        return Err(bad("content hash does not match outputs".into()));
    }
    Ok(m)
}
