use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::advsup::{AdvConfig, SegmenterConfig};
use crate::detector::DetectorConfig;
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::grasp::{ControllerConfig, Rig, TrialProtocol};
use crate::rng;
use crate::scenegen::SceneSpec;

pub const CONFIG_SCHEMA_VERSION: &str = "1";
pub const CONFIG_FILE: &str = "config.toml";

/// Which training images the detector sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Simulator renders, no diffusion model.
    SimOnly,
    /// Diffusion samples from a generator trained without segmenter feedback.
    NoAdv,
    /// Diffusion samples from a generator trained with segmenter feedback.
    #[default]
    Adversarial,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::SimOnly, Variant::NoAdv, Variant::Adversarial];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::SimOnly => "sim_only",
            Variant::NoAdv => "no_adv",
            Variant::Adversarial => "adversarial",
        }
    }

    pub fn uses_diffusion(self) -> bool {
        self != Variant::SimOnly
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}` (expected sim_only, no_adv or adversarial)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Each scene's clutter level is drawn uniformly from this range.
    pub clutter_range: (f64, f64),
    pub scene: SceneSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: 1200,
            val: 200,
            test: 200,
            clutter_range: (0.0, 1.0),
            scene: SceneSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Generator steps between saved training states.
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig { checkpoint_every: 250 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub style: String,
    pub guidance_weight: f64,
    pub batch_size: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            style: "real".into(),
            guidance_weight: 0.0,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct GraspStageConfig {
    /// Use ground-truth boxes instead of the trained detector.
    pub oracle: bool,
    pub controller: ControllerConfig,
    pub rig: Rig,
    pub protocol: TrialProtocol,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Score cut for precision, recall and center deviation.
    pub score_threshold: f64,
    /// Score cut for the detection dumps that feed AP.
    pub dump_score_threshold: f64,
    pub iou_threshold: f64,
    /// Segmenter fitted on real training images to score layout fidelity.
    pub judge: SegmenterConfig,
    pub judge_steps: usize,
    pub judge_lr: f64,
    pub judge_batch: usize,
    pub chunk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            score_threshold: 0.3,
            dump_score_threshold: 0.05,
            iou_threshold: 0.5,
            judge: SegmenterConfig::default(),
            judge_steps: 300,
            judge_lr: 2e-3,
            judge_batch: 16,
            chunk: 64,
        }
    }
}

/// Every knob of a pipeline run. Section seeds are ignored: each stage
/// draws its seed from `seed` through a named substream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub schema_version: String,
    pub seed: u64,
    pub variant: Variant,
    pub run_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub diffusion: DiffusionConfig,
    pub segmenter: SegmenterConfig,
    pub advsup: AdvConfig,
    pub training: TrainingConfig,
    pub synthesis: SynthesisConfig,
    pub detector: DetectorConfig,
    pub grasp: GraspStageConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: CONFIG_SCHEMA_VERSION.into(),
            seed: 0,
            variant: Variant::default(),
            run_dir: None,
            data: DataConfig::default(),
            diffusion: DiffusionConfig {
                timesteps: 100,
                beta_max: 0.1,
                ..DiffusionConfig::default()
            },
            segmenter: SegmenterConfig::default(),
            advsup: AdvConfig {
                epochs: 10,
                ..AdvConfig::default()
            },
            training: TrainingConfig::default(),
            synthesis: SynthesisConfig::default(),
            detector: DetectorConfig {
                input_size: (32, 32),
                stride: 4,
                base_width: 16,
                epochs: 15,
                ..DetectorConfig::default()
            },
            grasp: GraspStageConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// A small end-to-end configuration: 100 scenes and 500 generator steps.
    pub fn smoke() -> Self {
        let mut c = PipelineConfig::default();
        c.data.train = 100;
        c.data.val = 20;
        c.data.test = 20;
        c.diffusion.timesteps = 50;
        c.diffusion.beta_max = 0.2;
        c.diffusion.base_width = 8;
        c.segmenter.base_width = 8;
        c.advsup.batch_size = 8;
        c.advsup.epochs = 40;
        c.advsup.max_steps = Some(500);
        c.training.checkpoint_every = 100;
        c.detector.base_width = 8;
        c.detector.epochs = 40;
        c.eval.judge.base_width = 8;
        c.eval.judge_steps = 60;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::FormatVersion {
                what: "pipeline config",
                found: cfg.schema_version,
                expected: CONFIG_SCHEMA_VERSION.into(),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the serialized config. The run directory is left
    /// out so that a config copied between runs keeps its identity.
    pub fn hash(&self) -> Result<String> {
        let canonical = PipelineConfig {
            run_dir: None,
            ..self.clone()
        };
        Ok(hex::encode(Sha256::digest(canonical.to_toml()?.as_bytes())))
    }

    /// Seed of a named stage substream.
    pub fn stage_seed(&self, label: &str) -> u64 {
        rng::derive_seed(self.seed, label)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed {} does not fit a signed 64-bit integer", self.seed));
        }
        let d = &self.data;
        if d.train == 0 || d.val == 0 || d.test == 0 {
            return bad("data.train, data.val and data.test must all be positive".into());
        }
        let (lo, hi) = d.clutter_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad(format!("data.clutter_range ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1"));
        }
        d.scene.validate()?;
        self.diffusion.validate()?;
        self.advsup.validate()?;
        self.detector.validate()?;
        self.grasp.controller.validate()?;
        self.grasp.rig.validate()?;
        self.grasp.protocol.scene.validate()?;
        let n = d.scene.num_classes as usize;
        for (name, k) in [
            ("diffusion.num_classes", self.diffusion.num_classes),
            ("segmenter.num_classes", self.segmenter.num_classes),
            ("detector.num_classes", self.detector.num_classes),
            ("eval.judge.num_classes", self.eval.judge.num_classes),
            ("grasp.protocol.scene.num_classes", self.grasp.protocol.scene.num_classes as usize),
        ] {
            if k != n {
                return bad(format!("{name} = {k} but data.scene.num_classes = {n}"));
            }
        }
        if self.diffusion.image_size != d.scene.image_size {
            return bad(format!(
                "diffusion.image_size {:?} differs from data.scene.image_size {:?}",
                self.diffusion.image_size, d.scene.image_size
            ));
        }
        if self.training.checkpoint_every == 0 || self.synthesis.batch_size == 0 {
            return bad("training.checkpoint_every and synthesis.batch_size must be positive".into());
        }
        self.diffusion.style_index(&self.synthesis.style)?;
        if !(self.synthesis.guidance_weight >= 0.0) {
            return bad("synthesis.guidance_weight must be non-negative".into());
        }
        if self.grasp.protocol.trials_per_tier == 0 {
            return bad("grasp.protocol.trials_per_tier must be positive".into());
        }
        let e = &self.eval;
        if !(0.0..=1.0).contains(&e.score_threshold) || !(0.0..=1.0).contains(&e.dump_score_threshold) {
            return bad("eval score thresholds must lie in [0, 1]".into());
        }
        if !(e.iou_threshold > 0.0 && e.iou_threshold <= 1.0) {
            return bad("eval.iou_threshold must lie in (0, 1]".into());
        }
        if e.judge_steps == 0 || e.judge_batch == 0 || e.chunk == 0 || !(e.judge_lr > 0.0) {
            return bad("eval judge steps, batch, chunk and learning rate must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_is_lossless() {
        for cfg in [PipelineConfig::default(), PipelineConfig::smoke()] {
            let text = cfg.to_toml().unwrap();
            assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = PipelineConfig::from_toml("schema_version = \"1\"\nseed = 7\nvariant = \"no_adv\"\n[data]\ntrain = 10\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.variant, Variant::NoAdv);
        assert_eq!(cfg.data.train, 10);
        assert_eq!(cfg.data.val, 200);
    }

    #[test]
    fn rejects_bad_versions_and_mismatches() {
        assert!(PipelineConfig::from_toml("schema_version = \"2\"").is_err());
        assert!(PipelineConfig::from_toml("schema_version = \"1\"\n[detector]\nnum_classes = 4\n").is_err());
        assert!(PipelineConfig::from_toml("schema_version = \"1\"\nvariant = \"gan\"\n").is_err());
        assert!(PipelineConfig::from_toml("schema_version = \"1\"\n[data]\nclutter_range = [0.5, 0.2]\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash().unwrap(), a.clone().hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
    }
}
