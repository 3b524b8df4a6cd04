use std::collections::BTreeMap;
use std::path::Path;

use alliance_core::constructs::template_checksums;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// What a command read, how it was configured and what it wrote. Contains no
/// timestamps or secrets so reruns produce identical manifests.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub template_checksums: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

impl Manifest {
    pub fn new(command: &'static str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
            template_checksums: template_checksums()
                .into_iter()
                .map(|(f, h)| (f.to_string(), h))
                .collect(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Records `names`, relative to `dir`, in sorted order.
    pub fn outputs(&mut self, dir: &Path, names: &[String]) -> std::io::Result<()> {
        let mut names = names.to_vec();
        names.sort();
        for name in names {
            self.outputs.push(FileDigest {
                sha256: sha256_file(&dir.join(&name))?,
                path: name,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable manifest");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(MANIFEST_FILE), self.to_json())
    }
}
