//! Per-stage manifests. A stage whose recorded settings and input digests
//! match the current ones, and whose outputs are unchanged on disk, is
//! skipped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bugforge_core::corpus::hex;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub tool_version: String,
    pub settings_digest: String,
    /// Label to content digest. Labels rather than paths keep manifests
    /// independent of where the work directory lives.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Digest of a file's bytes, or of a directory's sorted relative paths and
/// file digests.
pub fn digest_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut h = Sha256::new();
        for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
            let entry = entry.with_context(|| format!("walking {}", path.display()))?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(path).expect("below root");
            let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            h.update(rel.join("/").as_bytes());
            h.update([0]);
            h.update(digest_path(entry.path())?.as_bytes());
            h.update([b'\n']);
        }
        Ok(hex(&h.finalize()))
    } else {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(sha256_hex(&bytes))
    }
}

pub fn settings_digest<T: Serialize>(settings: &T) -> String {
    sha256_hex(&serde_json::to_vec(settings).expect("settings serialize"))
}

pub struct StageRun {
    pub stage: &'static str,
    pub manifest_path: PathBuf,
    pub settings_digest: String,
    pub inputs: Vec<(String, PathBuf)>,
    pub outputs: Vec<(String, PathBuf)>,
}

impl StageRun {
    pub fn new<T: Serialize>(stage: &'static str, work_dir: &Path, settings: &T) -> Self {
        StageRun {
            stage,
            manifest_path: work_dir.join("manifests").join(format!("{stage}.json")),
            settings_digest: settings_digest(settings),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(mut self, label: &str, path: PathBuf) -> Self {
        self.inputs.push((label.to_string(), path));
        self
    }

    pub fn output(mut self, label: &str, path: PathBuf) -> Self {
        self.outputs.push((label.to_string(), path));
        self
    }

    fn digests(list: &[(String, PathBuf)]) -> Result<BTreeMap<String, String>> {
        list.iter().map(|(l, p)| Ok((l.clone(), digest_path(p)?))).collect()
    }

    fn current_inputs(&self) -> Result<BTreeMap<String, String>> {
        Self::digests(&self.inputs)
    }

    /// True when a previous run recorded the same settings and inputs and
    /// every output still has its recorded digest.
    pub fn up_to_date(&self) -> Result<bool> {
        let Ok(text) = std::fs::read_to_string(&self.manifest_path) else {
            return Ok(false);
        };
        let Ok(old) = serde_json::from_str::<StageManifest>(&text) else {
            return Ok(false);
        };
        if old.tool_version != TOOL_VERSION || old.settings_digest != self.settings_digest {
            return Ok(false);
        }
        if old.inputs != self.current_inputs()? {
            return Ok(false);
        }
        if self.outputs.iter().any(|(_, p)| !p.exists()) {
            return Ok(false);
        }
        Ok(old.outputs == Self::digests(&self.outputs)?)
    }

    pub fn record(&self) -> Result<StageManifest> {
        let manifest = StageManifest {
            stage: self.stage.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            settings_digest: self.settings_digest.clone(),
            inputs: self.current_inputs()?,
            outputs: Self::digests(&self.outputs)?,
        };
        let dir = self.manifest_path.parent().expect("manifest has a parent");
        std::fs::create_dir_all(dir)?;
        std::fs::write(&self.manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    }
}
