use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Everything needed to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name.
    pub args: Vec<String>,
    /// Input files by role, e.g. `task`, `plan`, `train_config`.
    pub config_paths: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub tool_version: String,
    /// RFC 3339 UTC.
    pub timestamp: String,
    /// Output files, relative to the manifest's directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String], timestamp: String) -> Self {
        Self {
            command: command.to_string(),
            args: args.to_vec(),
            config_paths: BTreeMap::new(),
            seeds: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("train", &["train".into(), "--plan".into(), "x".into()], "2024-01-01T00:00:00Z".into());
        m.seeds.insert("train_seed".into(), 9);
        m.config_paths.insert("plan".into(), "x".into());
        m.outputs.push("loss.csv".into());
        let path = dir.path().join("nested").join("manifest.json");
        m.write(&path).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
        assert!(std::fs::read_to_string(&path).unwrap().ends_with("}\n"));
    }

    #[test]
    fn unreadable_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, "{").unwrap();
        assert!(matches!(RunManifest::read(&path), Err(CliError::Parse { .. })));
    }
}
