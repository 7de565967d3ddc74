//! Run manifests and seed substreams.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Seed for the named substream: the first eight bytes of
/// sha256(root seed, little endian ‖ name).
pub fn substream(root: u64, name: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(root.to_le_bytes())
        .chain_update(name.as_bytes())
        .finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Files under `dir`, recursively, sorted by relative path.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| PipelineError::io(&d, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| PipelineError::io(&d, e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Slash-separated path of `path` relative to `base`.
pub fn relative(path: &Path, base: &Path) -> String {
    let rel = path.strip_prefix(base).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub seed: u64,
    /// Hash of the stage's configuration, excluding the thread count.
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Option<Manifest> {
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Same inputs, configuration and seed, and every recorded output still
    /// on disk with its recorded hash.
    pub fn is_current(&self, seed: u64, config_hash: &str, inputs: &BTreeMap<String, String>, work_dir: &Path) -> bool {
        self.seed == seed
            && self.config_hash == config_hash
            && &self.inputs == inputs
            && self
                .outputs
                .iter()
                .all(|(rel, h)| hash_file(&work_dir.join(rel)).is_ok_and(|cur| &cur == h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_differ_by_name_and_root() {
        let a = substream(42, "sample/split");
        assert_eq!(a, substream(42, "sample/split"));
        assert_ne!(a, substream(42, "sample/train"));
        assert_ne!(a, substream(43, "sample/split"));
        let mut expected = Sha256::new();
        expected.update(42u64.to_le_bytes());
        expected.update(b"sample/split");
        let d = expected.finalize();
        assert_eq!(a, u64::from_le_bytes(d[..8].try_into().unwrap()));
    }

    #[test]
    fn current_manifest_detects_changes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("s")).unwrap();
        std::fs::write(dir.path().join("s/out.txt"), "x").unwrap();
        let inputs: BTreeMap<String, String> = [("in".to_string(), "abc".to_string())].into();
        let m = Manifest {
            stage: "s".into(),
            seed: 1,
            config_hash: "c".into(),
            inputs: inputs.clone(),
            counts: BTreeMap::new(),
            outputs: [("s/out.txt".to_string(), sha256_hex(b"x"))].into(),
        };
        assert!(m.is_current(1, "c", &inputs, dir.path()));
        assert!(!m.is_current(2, "c", &inputs, dir.path()));
        assert!(!m.is_current(1, "d", &inputs, dir.path()));
        std::fs::write(dir.path().join("s/out.txt"), "y").unwrap();
        assert!(!m.is_current(1, "c", &inputs, dir.path()));
        let back: Manifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }
}
