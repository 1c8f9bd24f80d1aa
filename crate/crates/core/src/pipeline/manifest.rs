use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::Variant;
use crate::error::{Error, Result};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const RUN_MANIFEST_VERSION: &str = "1";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenScenes,
    TrainDiffusion,
    Synthesize,
    TrainDetector,
    RunGrasp,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::GenScenes,
        Stage::TrainDiffusion,
        Stage::Synthesize,
        Stage::TrainDetector,
        Stage::RunGrasp,
        Stage::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::GenScenes => "gen-scenes",
            Stage::TrainDiffusion => "train-diffusion",
            Stage::Synthesize => "synthesize",
            Stage::TrainDetector => "train-detector",
            Stage::RunGrasp => "run-grasp",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageState {
    Complete,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub state: StageState,
    /// Artifact name → path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
    pub started_at: u64,
    pub finished_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub variant: Variant,
    pub seed: u64,
    pub config_hash: String,
    pub created_at: u64,
    pub updated_at: u64,
    pub stages: BTreeMap<Stage, StageRecord>,
}

/// Seconds since the Unix epoch.
pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(variant: Variant, seed: u64, config_hash: String) -> Self {
        let t = now();
        RunManifest {
            schema_version: RUN_MANIFEST_VERSION.into(),
            variant,
            seed,
            config_hash,
            created_at: t,
            updated_at: t,
            stages: BTreeMap::new(),
        }
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RUN_MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.schema_version != RUN_MANIFEST_VERSION {
            return Err(Error::FormatVersion {
                what: "run manifest",
                found: m.schema_version,
                expected: RUN_MANIFEST_VERSION.into(),
            });
        }
        Ok(m)
    }

    /// Writes through a temporary file so a crash never leaves a torn
    /// manifest behind.
    pub fn save(&mut self, run_dir: &Path) -> Result<()> {
        self.updated_at = now();
        let path = run_dir.join(RUN_MANIFEST_FILE);
        let tmp = run_dir.join(format!("{RUN_MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.get(&stage)
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        self.stages.contains_key(&stage)
    }

    /// Records a stage and drops every later stage, whose inputs just
    /// changed.
    pub fn set(&mut self, stage: Stage, record: StageRecord) {
        self.stages.retain(|s, _| *s < stage);
        self.stages.insert(stage, record);
    }

    pub fn artifact(&self, stage: Stage, name: &str) -> Option<&str> {
        self.record(stage)?.artifacts.get(name).map(String::as_str)
    }
}

/// Exclusive ownership of a run directory for the life of the value.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::RunDirLocked(run_dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(Error::RunDirLocked(_))));
        drop(a);
        RunLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn setting_a_stage_invalidates_later_ones() {
        let rec = StageRecord {
            state: StageState::Complete,
            artifacts: BTreeMap::new(),
            started_at: 0,
            finished_at: 0,
            note: None,
        };
        let mut m = RunManifest::new(Variant::NoAdv, 3, "h".into());
        for s in Stage::ALL {
            m.set(s, rec.clone());
        }
        m.set(Stage::Synthesize, rec);
        assert!(m.is_done(Stage::TrainDiffusion) && m.is_done(Stage::Synthesize));
        assert!(!m.is_done(Stage::TrainDetector) && !m.is_done(Stage::Evaluate));
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new(Variant::SimOnly, 1, "abc".into());
        m.save(dir.path()).unwrap();
        assert_eq!(RunManifest::load(dir.path()).unwrap(), m);
    }
}
