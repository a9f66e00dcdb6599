//! Run directories: every output file is recorded with its SHA-256 in
//! `manifest.json`. Nothing time-dependent is written, so two runs with
//! the same inputs and seed give identical directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::session::hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<OutputEntry>,
}

pub struct RunDir {
    root: PathBuf,
    manifest: RunManifest,
}

pub fn sha256_hex(b: &[u8]) -> String {
    hex(&Sha256::digest(b))
}

impl RunDir {
    pub fn create(root: &Path, command: &str, seed: u64, config_text: &str, inputs: Vec<String>) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(RunDir {
            root: root.to_path_buf(),
            manifest: RunManifest {
                tool: "logismos".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                seed,
                config_sha256: sha256_hex(config_text.as_bytes()),
                inputs,
                outputs: Vec::new(),
            },
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.root.join(name);
        if let Some(d) = p.parent() {
            fs::create_dir_all(d)?;
        }
        fs::write(&p, bytes)?;
        self.record(name, bytes);
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let b = serde_json::to_vec_pretty(value)?;
        self.write_bytes(name, &b)
    }

    /// Records a file written by other code.
    pub fn add_file(&mut self, name: &str) -> Result<()> {
        let b = fs::read(self.root.join(name))?;
        self.record(name, &b);
        Ok(())
    }

    fn record(&mut self, name: &str, b: &[u8]) {
        self.manifest.outputs.retain(|o| o.path != name);
        self.manifest.outputs.push(OutputEntry { path: name.into(), sha256: sha256_hex(b), bytes: b.len() as u64 });
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        fs::write(self.root.join("manifest.json"), serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = RunDir::create(dir.path(), "test", 3, "seed = 3", vec!["in".into()]).unwrap();
        r.write_bytes("b.bin", b"xyz").unwrap();
        r.write_json("a.json", &vec![1, 2]).unwrap();
        let m = r.finish().unwrap();
        assert_eq!(m.outputs.len(), 2);
        assert_eq!(m.outputs[0].path, "a.json");
        assert_eq!(m.outputs[1].sha256, sha256_hex(b"xyz"));
        let on_disk: RunManifest = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(on_disk, m);
    }
}
