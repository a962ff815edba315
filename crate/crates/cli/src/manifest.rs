//! Run manifests: every artifact a command writes is registered with its
//! content hash, so reruns can be compared file-for-file and nothing under
//! a run directory escapes accounting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use headscope::error::{Error, Result};
use headscope::persist::{hash_file, read_json, write_json, FORMAT_VERSION};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Unix-seconds clock honoring SOURCE_DATE_EPOCH so reruns can be made
/// byte-identical.
#[derive(Debug, Clone, Copy)]
pub struct Clock {
    fixed: Option<u64>,
}

impl Clock {
    pub fn system() -> Self {
        let fixed = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.parse().ok());
        Clock { fixed }
    }

    pub fn fixed(epoch: u64) -> Self {
        Clock { fixed: Some(epoch) }
    }

    pub fn now_unix(&self) -> u64 {
        match self.fixed {
            Some(t) => t,
            None => std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub status: String,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub created_unix: u64,
    pub stages: BTreeMap<String, StageStatus>,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Serializes writes into one manifest per run directory.
pub struct ManifestWriter {
    run_dir: PathBuf,
    manifest: RunManifest,
    clock: Clock,
}

impl ManifestWriter {
    /// Opens the run directory's manifest, creating it when absent. An
    /// existing manifest must carry the same config hash; a run directory
    /// never mixes configurations.
    pub fn open(run_dir: &Path, config_hash: &str, clock: Clock) -> Result<Self> {
        std::fs::create_dir_all(run_dir)?;
        let path = run_dir.join(MANIFEST_FILE);
        let manifest = if path.exists() {
            let existing: RunManifest = read_json(&path)?;
            if existing.format_version != FORMAT_VERSION {
                return Err(Error::Format(format!(
                    "manifest format_version {} unsupported",
                    existing.format_version
                )));
            }
            if existing.config_hash != config_hash {
                return Err(Error::config(format!(
                    "run directory {} was produced by a different config",
                    run_dir.display()
                )));
            }
            existing
        } else {
            RunManifest {
                format_version: FORMAT_VERSION,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: config_hash.to_string(),
                created_unix: clock.now_unix(),
                stages: BTreeMap::new(),
                artifacts: Vec::new(),
            }
        };
        Ok(ManifestWriter {
            run_dir: run_dir.to_path_buf(),
            manifest,
            clock,
        })
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    /// Registers a file that now exists under the run directory.
    pub fn register(&mut self, path: &Path) -> Result<()> {
        let rel = path
            .strip_prefix(&self.run_dir)
            .map_err(|_| Error::invalid_input(format!("{} outside run dir", path.display())))?
            .to_string_lossy()
            .replace('\\', "/");
        let sha256 = hash_file(path)?;
        let bytes = std::fs::metadata(path)?.len();
        self.manifest.artifacts.retain(|a| a.path != rel);
        self.manifest.artifacts.push(ArtifactEntry {
            path: rel,
            sha256,
            bytes,
        });
        self.manifest.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(())
    }

    pub fn complete_stage(&mut self, stage: &str) {
        self.manifest.stages.insert(
            stage.to_string(),
            StageStatus {
                status: "complete".to_string(),
                finished_unix: self.clock.now_unix(),
            },
        );
    }

    pub fn stage_complete(&self, stage: &str) -> bool {
        self.manifest
            .stages
            .get(stage)
            .is_some_and(|s| s.status == "complete")
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn write(&self) -> Result<()> {
        write_json(&self.run_dir.join(MANIFEST_FILE), &self.manifest)
    }
}

/// Checks completeness: every file under the run directory (manifest
/// aside) appears in the manifest with a matching hash.
pub fn verify_manifest(run_dir: &Path) -> Result<()> {
    let manifest: RunManifest = read_json(&run_dir.join(MANIFEST_FILE))?;
    let listed: BTreeMap<&str, &ArtifactEntry> = manifest
        .artifacts
        .iter()
        .map(|a| (a.path.as_str(), a))
        .collect();
    let mut stack = vec![run_dir.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let entry = entry?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path
                .strip_prefix(run_dir)
                .unwrap()
                .to_string_lossy()
                .replace('\\', "/");
            if rel == MANIFEST_FILE {
                continue;
            }
            let Some(entry) = listed.get(rel.as_str()) else {
                return Err(Error::Format(format!(
                    "file {rel} on disk is missing from the manifest"
                )));
            };
            let actual = hash_file(&path)?;
            if actual != entry.sha256 {
                return Err(Error::Format(format!(
                    "file {rel} hash differs from the manifest"
                )));
            }
        }
    }
    Ok(())
}
