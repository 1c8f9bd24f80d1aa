//! Stage orchestration over a run directory.

pub mod config;
pub mod manifest;
pub mod stages;

pub use config::{PipelineConfig, Variant, CONFIG_FILE, CONFIG_SCHEMA_VERSION};
pub use manifest::{RunLock, RunManifest, Stage, StageRecord, StageState, LOCK_FILE, RUN_MANIFEST_FILE};
pub use stages::*;
