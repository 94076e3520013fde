//! `manifest.json`: what each stage wrote, from which inputs, under which config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub inputs: Vec<FileRecord>,
    pub artifacts: Vec<FileRecord>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the JSON rendering of `value` (field order is declaration order).
pub fn config_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("config serialises"))
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn file_record(root: &Path, path: &Path) -> Result<FileRecord, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let rel = path.strip_prefix(root).unwrap_or(path);
    Ok(FileRecord { path: rel.to_string_lossy().replace('\\', "/"), sha256: sha256_hex(&bytes) })
}

/// An output directory and its manifest.
pub struct Workspace {
    pub root: PathBuf,
    pub manifest: RunManifest,
}

impl Workspace {
    pub fn open(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", root.display())))?;
        let path = root.join(MANIFEST_FILE);
        let manifest = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Config(format!("corrupt manifest {}: {e}", path.display())))?,
            Err(_) => RunManifest::default(),
        };
        Ok(Self { root: root.to_path_buf(), manifest })
    }

    pub fn dir(&self, rel: &str) -> Result<PathBuf, CliError> {
        let d = self.root.join(rel);
        fs::create_dir_all(&d).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", d.display())))?;
        Ok(d)
    }

    /// True when `stage` already ran with `hash` and neither its inputs nor
    /// its artifacts changed since.
    pub fn is_current(&self, stage: &str, hash: &str) -> bool {
        let Some(rec) = self.manifest.stages.get(stage) else {
            return false;
        };
        let intact = |f: &FileRecord| fs::read(self.root.join(&f.path)).map(|b| sha256_hex(&b) == f.sha256).unwrap_or(false);
        rec.config_hash == hash && rec.inputs.iter().all(intact) && rec.artifacts.iter().all(intact)
    }

    pub fn stage(&self, stage: &str) -> Option<&StageRecord> {
        self.manifest.stages.get(stage)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        stage: &str,
        hash: &str,
        seed: u64,
        started: u64,
        inputs: &[PathBuf],
        artifacts: &[PathBuf],
        notes: BTreeMap<String, serde_json::Value>,
    ) -> Result<(), CliError> {
        let inputs = inputs.iter().map(|p| file_record(&self.root, p)).collect::<Result<_, _>>()?;
        let mut artifacts: Vec<FileRecord> =
            artifacts.iter().map(|p| file_record(&self.root, p)).collect::<Result<_, _>>()?;
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let rec = StageRecord {
            config_hash: hash.to_string(),
            seed,
            started_unix: started,
            finished_unix: now_unix(),
            inputs,
            artifacts,
            notes,
        };
        self.manifest.stages.insert(stage.to_string(), rec);
        self.save()
    }

    pub fn save(&self) -> Result<(), CliError> {
        let path = self.root.join(MANIFEST_FILE);
        let bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serialises");
        fs::write(&path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }

    /// Artifact paths of a stage, absolute.
    pub fn artifacts(&self, stage: &str) -> Vec<PathBuf> {
        self.stage(stage).map(|r| r.artifacts.iter().map(|a| self.root.join(&a.path)).collect()).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_changed_config_and_tampered_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = Workspace::open(dir.path()).unwrap();
        let f = ws.dir("stage").unwrap().join("a.txt");
        fs::write(&f, "one").unwrap();
        ws.record("s", "h1", 3, 0, &[], &[f.clone()], BTreeMap::new()).unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        assert!(ws.is_current("s", "h1"));
        assert!(!ws.is_current("s", "h2"));
        assert!(!ws.is_current("t", "h1"));
        fs::write(&f, "two").unwrap();
        assert!(!ws.is_current("s", "h1"));

        let mut ws = Workspace::open(dir.path()).unwrap();
        let g = ws.dir("next").unwrap().join("b.txt");
        fs::write(&g, "b").unwrap();
        ws.record("t", "h", 3, 0, &[f.clone()], &[g], BTreeMap::new()).unwrap();
        assert!(ws.is_current("t", "h"));
        fs::write(&f, "three").unwrap();
        assert!(!ws.is_current("t", "h"));
        assert_eq!(ws.stage("s").unwrap().artifacts[0].path, "stage/a.txt");
    }
}
