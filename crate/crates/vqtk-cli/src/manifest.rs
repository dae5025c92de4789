//! Run manifests. Every command that writes outputs drops a JSON record
//! of its resolved configuration next to them, enough to rerun the
//! command exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use vqtk_core::error::{Error, Result};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    /// Fully resolved parameters after merging flags with the config
    /// file.
    pub params: BTreeMap<String, String>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Command-specific extras, e.g. the fit trace.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, threads: usize) -> Self {
        Self {
            command: command.to_string(),
            seed,
            threads,
            params: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    /// Writes the manifest beside `target`: `manifest.json` inside a
    /// directory target, `<name>.manifest.json` beside a file target.
    pub fn write_beside(&self, target: &Path) -> Result<()> {
        let path = if target.is_dir() {
            target.join("manifest.json")
        } else {
            let name = target
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "output".to_string());
            target.with_file_name(format!("{name}.manifest.json"))
        };
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, body).map_err(|source| Error::Io { path, source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_next_to_file_and_inside_dir() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new("tokenize", 7, 1);
        m.params.insert("quantizer".into(), "vq".into());

        let file_target = dir.path().join("out.tokg");
        m.write_beside(&file_target).unwrap();
        let text =
            std::fs::read_to_string(dir.path().join("out.tokg.manifest.json")).unwrap();
        assert!(text.contains("\"tokenize\""));
        assert!(text.contains("\"quantizer\""));

        let sub = dir.path().join("outs");
        std::fs::create_dir(&sub).unwrap();
        m.write_beside(&sub).unwrap();
        assert!(sub.join("manifest.json").is_file());
    }
}
