use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pgnet::{Error, Result};

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Provenance record written once into every output directory. The
/// timestamp lives only here, so all other outputs stay byte-reproducible.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Model variant for training-type runs (`full` or the ablation list).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub input_hash: String,
    pub outputs: Vec<String>,
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64, input_hash: String) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config,
            seed,
            variant: None,
            input_hash,
            outputs: Vec::new(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RUN_MANIFEST);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git-style content hash: each file is hashed as `blob <len>\0<bytes>`,
/// then the sorted `path\0digest\n` lines are hashed together.
pub fn content_hash(root: &Path, files: &[PathBuf]) -> Result<String> {
    let mut entries = Vec::with_capacity(files.len());
    for rel in files {
        let path = root.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", bytes.len()).as_bytes());
        h.update(&bytes);
        entries.push((rel.to_string_lossy().replace('\\', "/"), hex(&h.finalize())));
    }
    entries.sort();
    let mut top = Sha256::new();
    for (p, d) in &entries {
        top.update(format!("{p}\0{d}\n").as_bytes());
    }
    Ok(hex(&top.finalize()))
}

/// Hash of a dataset directory: its manifest plus every cloud it lists.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let m = pgnet::data::read_manifest(dir)?;
    let mut files = vec![PathBuf::from(pgnet::data::MANIFEST_FILE)];
    for s in &m.samples {
        files.extend([&s.files.partial, &s.files.prior, &s.files.gt].map(PathBuf::from));
    }
    content_hash(dir, &files)
}
