use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, Variant, CONFIG_FILE};
use super::manifest::{now, RunLock, RunManifest, Stage, StageRecord, StageState, RUN_MANIFEST_FILE};
use crate::advsup::{
    fit_segmenter, load_state, read_loss_log, save_state, total_steps, train, AdvConfig, AdvDataset, LossLog,
    SegmenterDiscriminator, TrainState, GENERATOR_FILE, HISTORY_FILE, LOSS_LOG_FILE,
};
use crate::detector::{
    decode, read_detections, train_detector, write_detections, DetLossRecord, Detection, DetectionRecord,
    DetectorCheckpoint, DetectorModel,
};
use crate::diffusion::{DiffusionCheckpoint, DiffusionModel, SampleRequest};
use crate::error::{Error, Result};
use crate::eval::{build_report, detection_metrics, mean_layout_miou, GtBox, ImageEval, MethodMetrics, MetricsReport};
use crate::grasp::{read_trial_log, run_tier, write_trial_log, OracleDetector, Tier, TrialSummary, ViewDetector};
use crate::image::Image;
use crate::jsonl;
use crate::rng;
use crate::scenegen::{
    export_dataset, generate_scene, load_dataset, render, Dataset, LayoutScene, Manifest, RenderedPair, SceneSpec,
    StyleDomain,
};

const DTYPE: DType = DType::F32;

pub const DATA_DIR: &str = "data";
pub const DIFFUSION_DIR: &str = "diffusion";
pub const SYNTH_DIR: &str = "synth";
pub const DETECTOR_DIR: &str = "detector";
pub const GRASP_DIR: &str = "grasp";
pub const EVAL_DIR: &str = "eval";
pub const DETECTOR_FILE: &str = "detector.json";
pub const DETECTOR_LOSS_FILE: &str = "loss_log.csv";
pub const EPOCH_METRICS_FILE: &str = "epoch_metrics.jsonl";
pub const VAL_DETECTIONS_FILE: &str = "detections_val.jsonl";
pub const TEST_DETECTIONS_FILE: &str = "detections_test.jsonl";
pub const GRASP_SUMMARY_FILE: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const SPLITS_FILE: &str = "splits.json";

/// Everything a run directory may hold; `--force` removes exactly these.
const RUN_ARTIFACTS: [&str; 11] = [
    CONFIG_FILE,
    RUN_MANIFEST_FILE,
    DATA_DIR,
    DIFFUSION_DIR,
    SYNTH_DIR,
    DETECTOR_DIR,
    GRASP_DIR,
    EVAL_DIR,
    "report.json",
    "report.csv",
    "report.md",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Scene seeds of every split, recorded for the disjointness check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSeeds {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl SplitSeeds {
    pub fn disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        self.train.iter().chain(&self.val).chain(&self.test).all(|s| seen.insert(*s))
    }
}

/// Validation metrics after one detector epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub precision: f64,
    pub recall: f64,
    pub map50: Option<f64>,
    pub map50_95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierOutcome {
    pub tier: Tier,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub results: Vec<TrialSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspSummary {
    pub variant: Variant,
    pub detector: String,
    pub tiers: Vec<TierOutcome>,
}

impl GraspSummary {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn rate(&self, tier: Tier) -> Option<f64> {
        self.tiers.iter().find(|t| t.tier == tier).map(|t| t.success_rate)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn remove_path(path: &Path) -> Result<()> {
    let res = if path.is_dir() {
        fs::remove_dir_all(path)
    } else if path.exists() {
        fs::remove_file(path)
    } else {
        Ok(())
    };
    res.map_err(|e| Error::io(path, e))
}

fn missing(stage: Stage, reason: impl Into<String>) -> Error {
    Error::MissingStage {
        stage: stage.as_str(),
        reason: reason.into(),
    }
}

/// Images of a split in the slot the pipeline wrote them to.
fn split_images(data: &Dataset, style: StyleDomain) -> Result<Vec<Image>> {
    data.images
        .iter()
        .map(|p| match style {
            StyleDomain::Sim => p.sim.clone(),
            StyleDomain::Real => p.real.clone(),
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InvalidConfig(format!("dataset lacks {} renders", style.as_str())))
}

/// Synthesized or copied images: whichever slot is filled.
fn any_images(data: &Dataset) -> Result<Vec<Image>> {
    data.images
        .iter()
        .map(|p| p.real.clone().or_else(|| p.sim.clone()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InvalidConfig("synthesized set has entries without images".into()))
}

/// Detections decoded at `score_threshold` rather than the model's own.
pub fn detect_at(model: &DetectorModel, images: &[Image], score_threshold: f64, chunk: usize) -> Result<Vec<Vec<Detection>>> {
    let mut cfg = model.config().clone();
    cfg.score_threshold = score_threshold;
    let mut out = Vec::with_capacity(images.len());
    for part in images.chunks(chunk.max(1)) {
        let refs: Vec<&Image> = part.iter().collect();
        let maps = model.head_maps(&refs)?;
        out.extend(maps.iter().zip(part).map(|(m, im)| decode(m, &cfg, (im.height, im.width))));
    }
    Ok(out)
}

fn detection_records(ids: &[String], dets: &[Vec<Detection>]) -> Vec<DetectionRecord> {
    ids.iter()
        .zip(dets)
        .flat_map(|(id, d)| d.iter().map(move |x| DetectionRecord::new(id, x)))
        .collect()
}

/// Groups dumped detections back by image id, in `ids` order.
pub fn group_detections(ids: &[String], records: &[DetectionRecord]) -> Result<Vec<Vec<Detection>>> {
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut out = vec![Vec::new(); ids.len()];
    for r in records {
        let i = *index
            .get(r.image_id.as_str())
            .ok_or_else(|| Error::InvalidConfig(format!("detection for unknown image `{}`", r.image_id)))?;
        out[i].push(r.detection());
    }
    Ok(out)
}

/// Detection metrics of dumped detections against a split's scenes.
pub fn dump_metrics(
    scenes: &[LayoutScene],
    ids: &[String],
    records: &[DetectionRecord],
    score_threshold: f64,
) -> Result<crate::eval::DetectionMetrics> {
    let preds = group_detections(ids, records)?;
    let gts: Vec<Vec<GtBox>> = scenes.iter().map(GtBox::from_scene).collect();
    let evals: Vec<ImageEval> = preds.iter().zip(&gts).map(|(p, g)| ImageEval { preds: p, gts: g }).collect();
    Ok(detection_metrics(&evals, score_threshold))
}

fn entry_ids(dir: &Path) -> Result<Vec<String>> {
    Ok(Manifest::load(dir)?.entries.into_iter().map(|e| e.id).collect())
}

/// One run directory driven by one config.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub run_dir: PathBuf,
    pub force: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, run_dir: PathBuf, force: bool) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline { config, run_dir, force })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.run_dir.join(rel)
    }

    fn split_dir(&self, split: Split) -> PathBuf {
        self.run_dir.join(DATA_DIR).join(split.as_str())
    }

    /// Loads the manifest of an existing run and checks that it was made
    /// with this config.
    fn open_manifest(&self, stage: Stage) -> Result<RunManifest> {
        if !self.path(RUN_MANIFEST_FILE).exists() {
            return Err(missing(stage, format!("{} is not an initialized run directory", self.run_dir.display())));
        }
        let m = RunManifest::load(&self.run_dir)?;
        let hash = self.config.hash()?;
        if m.config_hash != hash {
            return Err(Error::InvalidConfig(format!(
                "config hash {hash} differs from the run's {}; start a new run directory or pass --force to gen-scenes",
                m.config_hash
            )));
        }
        Ok(m)
    }

    fn require(&self, m: &RunManifest, stage: Stage, needed: Stage) -> Result<()> {
        if m.is_done(needed) {
            Ok(())
        } else {
            Err(missing(stage, format!("stage `{needed}` has not completed")))
        }
    }

    fn finish(
        &self,
        m: &mut RunManifest,
        stage: Stage,
        state: StageState,
        started_at: u64,
        artifacts: &[(&str, String)],
        note: Option<String>,
    ) -> Result<()> {
        for (_, rel) in artifacts {
            if !self.path(rel).exists() {
                return Err(Error::InvalidConfig(format!("stage `{stage}` did not produce {rel}")));
            }
        }
        m.set(
            stage,
            StageRecord {
                state,
                artifacts: artifacts.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
                started_at,
                finished_at: now(),
                note,
            },
        );
        m.save(&self.run_dir)
    }

    /// Runs `stage` while holding the run lock.
    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        if stage == Stage::GenScenes {
            self.prepare_run_dir()?;
        }
        create_dir(&self.run_dir)?;
        let _lock = RunLock::acquire(&self.run_dir)?;
        self.run_stage_locked(stage)
    }

    /// Every stage in order under a single lock.
    pub fn run_all(&self) -> Result<()> {
        self.prepare_run_dir()?;
        create_dir(&self.run_dir)?;
        let _lock = RunLock::acquire(&self.run_dir)?;
        for stage in Stage::ALL {
            self.run_stage_locked(stage)?;
        }
        Ok(())
    }

    fn run_stage_locked(&self, stage: Stage) -> Result<()> {
        log::info!("stage {stage} ({})", self.run_dir.display());
        match stage {
            Stage::GenScenes => self.gen_scenes(),
            Stage::TrainDiffusion => self.train_diffusion(),
            Stage::Synthesize => self.synthesize(),
            Stage::TrainDetector => self.train_detector(),
            Stage::RunGrasp => self.run_grasp(),
            Stage::Evaluate => self.evaluate(&[]).map(|_| ()),
        }
    }

    fn prepare_run_dir(&self) -> Result<()> {
        let dir = &self.run_dir;
        if !dir.exists() {
            return Ok(());
        }
        let non_empty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if !non_empty {
            return Ok(());
        }
        if !self.force {
            return Err(Error::RunDirNotEmpty(dir.clone()));
        }
        if dir.join(super::manifest::LOCK_FILE).exists() {
            return Err(Error::RunDirLocked(dir.clone()));
        }
        for name in RUN_ARTIFACTS {
            remove_path(&dir.join(name))?;
        }
        Ok(())
    }

    fn scene_spec(&self, clutter: f64) -> SceneSpec {
        SceneSpec {
            clutter_level: clutter,
            ..self.config.data.scene.clone()
        }
    }

    fn gen_scenes(&self) -> Result<()> {
        let started = now();
        let cfg = &self.config;
        let mut manifest = RunManifest::new(cfg.variant, cfg.seed, cfg.hash()?);
        cfg.save(&self.path(CONFIG_FILE))?;
        manifest.save(&self.run_dir)?;

        let base = cfg.stage_seed("scenes");
        let counts = [cfg.data.train, cfg.data.val, cfg.data.test];
        let mut offset = 0u64;
        let mut seeds: Vec<Vec<u64>> = Vec::new();
        for n in counts {
            seeds.push((0..n as u64).map(|i| base.wrapping_add(offset + i)).collect());
            offset += n as u64;
        }
        let split_seeds = SplitSeeds {
            train: seeds[0].clone(),
            val: seeds[1].clone(),
            test: seeds[2].clone(),
        };
        if !split_seeds.disjoint() {
            return Err(Error::InvalidConfig("split seed ranges overlap".into()));
        }
        let clutter_seed = cfg.stage_seed("clutter");
        let (lo, hi) = cfg.data.clutter_range;
        let mut artifacts = Vec::new();
        for (split, seeds) in Split::ALL.into_iter().zip(&seeds) {
            let scenes = crate::par::try_map_indices(seeds.len(), |i| {
                let mut r = rng::rng_from(rng::derive_indexed(clutter_seed, split.as_str(), i as u64));
                let clutter = if hi > lo { r.random_range(lo..=hi) } else { lo };
                generate_scene(&self.scene_spec(clutter), seeds[i])
            })?;
            let renders = crate::par::map_slice(&scenes, |s| RenderedPair {
                sim: (split == Split::Train).then(|| render(s, StyleDomain::Sim)),
                real: Some(render(s, StyleDomain::Real)),
            });
            let dir = self.split_dir(split);
            export_dataset(&scenes, &renders, &dir)?;
            let loaded = Manifest::load(&dir)?;
            if loaded.entries.len() != seeds.len() {
                return Err(Error::InvalidConfig(format!("{} split manifest is incomplete", split.as_str())));
            }
            artifacts.push((split.as_str(), format!("{DATA_DIR}/{}", split.as_str())));
        }
        let splits_rel = format!("{DATA_DIR}/{SPLITS_FILE}");
        write_json(&self.path(&splits_rel), &split_seeds)?;
        artifacts.push(("splits", splits_rel));
        self.finish(&mut manifest, Stage::GenScenes, StageState::Complete, started, &artifacts, None)
    }

    fn adv_config(&self) -> AdvConfig {
        let cfg = &self.config;
        AdvConfig {
            lambda_adv: if cfg.variant == Variant::NoAdv { 0.0 } else { cfg.advsup.lambda_adv },
            seed: cfg.stage_seed("advsup"),
            ..cfg.advsup.clone()
        }
    }

    fn load_train_state(&self, dir: &Path, adv: &AdvConfig) -> Result<TrainState> {
        let cfg = &self.config;
        if !self.force && dir.join(GENERATOR_FILE).exists() {
            let state = load_state(dir, adv, DTYPE)?;
            log::info!("resuming generator training at step {}", state.step);
            return Ok(state);
        }
        let diffusion = crate::diffusion::DiffusionConfig {
            seed: cfg.stage_seed("diffusion-init"),
            ..cfg.diffusion.clone()
        };
        let segmenter = crate::advsup::SegmenterConfig {
            seed: cfg.stage_seed("segmenter-init"),
            ..cfg.segmenter.clone()
        };
        TrainState::new(&diffusion, &segmenter, adv, DTYPE)
    }

    fn train_diffusion(&self) -> Result<()> {
        let started = now();
        let mut m = self.open_manifest(Stage::TrainDiffusion)?;
        self.require(&m, Stage::TrainDiffusion, Stage::GenScenes)?;
        if !self.config.variant.uses_diffusion() {
            return self.finish(
                &mut m,
                Stage::TrainDiffusion,
                StageState::Skipped,
                started,
                &[],
                Some("sim_only trains no generator".into()),
            );
        }
        let data = load_dataset(&self.split_dir(Split::Train))?;
        let images = split_images(&data, StyleDomain::Real)?;
        let adv = self.adv_config();
        let dir = self.path(DIFFUSION_DIR);
        create_dir(&dir)?;
        let mut state = self.load_train_state(&dir, &adv)?;

        // The log restarts from the checkpointed history so a resumed run
        // never carries rows past its step counter.
        let log_path = dir.join(LOSS_LOG_FILE);
        remove_path(&log_path)?;
        let mut log = LossLog::open(&log_path)?;
        for r in &state.history {
            log.append(r).map_err(|e| Error::io(&log_path, e))?;
        }
        let dataset = AdvDataset {
            images: &images,
            layouts: &data.scenes,
        };
        let total = total_steps(images.len(), &adv);
        let every = self.config.training.checkpoint_every;
        let mut io_err = None;
        while state.step < total {
            let chunk = AdvConfig {
                max_steps: Some((state.step + every).min(total)),
                ..adv.clone()
            };
            train(&dataset, &chunk, &mut state, |r| {
                if let Err(e) = log.append(r) {
                    io_err.get_or_insert(e);
                }
                if r.step % 50 == 0 {
                    log::info!("step {} L_diff {:.4} L_adv_gen {:.2} L_Dis {:.2}", r.step, r.l_diff, r.l_adv_gen, r.l_dis);
                }
            })?;
            if let Some(e) = io_err.take() {
                return Err(Error::io(&log_path, e));
            }
            save_state(&state, &dir)?;
        }
        save_state(&state, &dir)?;
        drop(log);

        let check = load_state(&dir, &adv, DTYPE)?;
        if check.step != total || read_loss_log(&log_path)?.len() != total {
            return Err(Error::InvalidConfig("generator checkpoint or loss log is incomplete".into()));
        }
        let rel = |f: &str| format!("{DIFFUSION_DIR}/{f}");
        self.finish(
            &mut m,
            Stage::TrainDiffusion,
            StageState::Complete,
            started,
            &[
                ("generator", rel(GENERATOR_FILE)),
                ("discriminator", rel(crate::advsup::DISCRIMINATOR_FILE)),
                ("history", rel(HISTORY_FILE)),
                ("loss_log", rel(LOSS_LOG_FILE)),
            ],
            Some(format!("lambda_adv = {}", adv.lambda_adv)),
        )
    }

    /// Per-layout sampling seed; depends only on the run seed and index.
    pub fn layout_seed(&self, index: usize) -> u64 {
        rng::derive_indexed(self.config.stage_seed("synthesize"), "layout", index as u64)
    }

    fn synthesize(&self) -> Result<()> {
        let started = now();
        let mut m = self.open_manifest(Stage::Synthesize)?;
        self.require(&m, Stage::Synthesize, Stage::TrainDiffusion)?;
        let data = load_dataset(&self.split_dir(Split::Train))?;
        let dir = self.path(SYNTH_DIR);
        remove_path(&dir)?;
        let pairs: Vec<RenderedPair> = if self.config.variant.uses_diffusion() {
            let ckpt = DiffusionCheckpoint::load(&self.path(&format!("{DIFFUSION_DIR}/{GENERATOR_FILE}")))
                .map_err(|e| missing(Stage::Synthesize, format!("generator checkpoint: {e}")))?;
            let model = DiffusionModel {
                net: ckpt.restore(DTYPE)?,
                schedule: ckpt.schedule.clone(),
            };
            let syn = &self.config.synthesis;
            let mut out = Vec::with_capacity(data.len());
            for (c, chunk) in data.scenes.chunks(syn.batch_size).enumerate() {
                let requests: Vec<SampleRequest> = chunk
                    .iter()
                    .enumerate()
                    .map(|(j, layout)| SampleRequest {
                        layout,
                        style: syn.style.clone(),
                        seed: self.layout_seed(c * syn.batch_size + j),
                        guidance_weight: syn.guidance_weight,
                    })
                    .collect();
                let images = model.sample_batch(&requests)?;
                out.extend(images.into_iter().map(|img| RenderedPair { sim: None, real: Some(img) }));
                log::info!("synthesized {}/{}", out.len(), data.len());
            }
            out
        } else {
            split_images(&data, StyleDomain::Sim)?
                .into_iter()
                .map(|img| RenderedPair { sim: Some(img), real: None })
                .collect()
        };
        export_dataset(&data.scenes, &pairs, &dir)?;
        if Manifest::load(&dir)?.entries.len() != data.len() {
            return Err(Error::InvalidConfig("synthesized set is incomplete".into()));
        }
        self.finish(&mut m, Stage::Synthesize, StageState::Complete, started, &[("synth", SYNTH_DIR.into())], None)
    }

    fn eval_split(&self, split: Split) -> Result<(Vec<Image>, Vec<LayoutScene>, Vec<String>)> {
        let dir = self.split_dir(split);
        let data = load_dataset(&dir)?;
        let images = split_images(&data, StyleDomain::Real)?;
        Ok((images, data.scenes, entry_ids(&dir)?))
    }

    fn train_detector(&self) -> Result<()> {
        let started = now();
        let mut m = self.open_manifest(Stage::TrainDetector)?;
        self.require(&m, Stage::TrainDetector, Stage::Synthesize)?;
        let synth = load_dataset(&self.path(SYNTH_DIR))?;
        let images = any_images(&synth)?;
        let (val_images, val_scenes, val_ids) = self.eval_split(Split::Val)?;
        let dir = self.path(DETECTOR_DIR);
        remove_path(&dir)?;
        create_dir(&dir)?;
        let cfg = crate::detector::DetectorConfig {
            seed: self.config.stage_seed("detector"),
            ..self.config.detector.clone()
        };
        let ev = &self.config.eval;
        let mut epochs = Vec::new();
        let (model, losses) = train_detector(&images, &synth.scenes, &cfg, DTYPE, |epoch, model| {
            let dets = detect_at(model, &val_images, ev.dump_score_threshold, ev.chunk)?;
            let records = detection_records(&val_ids, &dets);
            let dm = dump_metrics(&val_scenes, &val_ids, &records, ev.score_threshold)?;
            log::info!("detector epoch {epoch}: val P {:.3} R {:.3} mAP50 {:?}", dm.precision, dm.recall, dm.map50);
            epochs.push(EpochMetrics {
                epoch,
                precision: dm.precision,
                recall: dm.recall,
                map50: dm.map50,
                map50_95: dm.map50_95,
            });
            Ok(())
        })?;
        jsonl::write_jsonl(&dir.join(EPOCH_METRICS_FILE), &epochs)?;
        write_detector_losses(&dir.join(DETECTOR_LOSS_FILE), &losses)?;
        let ckpt_path = dir.join(DETECTOR_FILE);
        DetectorCheckpoint::capture(&model)?.save(&ckpt_path)?;
        let model = DetectorCheckpoint::load(&ckpt_path)?.restore(DTYPE)?;

        let (test_images, _, test_ids) = self.eval_split(Split::Test)?;
        for (file, imgs, ids) in [
            (VAL_DETECTIONS_FILE, &val_images, &val_ids),
            (TEST_DETECTIONS_FILE, &test_images, &test_ids),
        ] {
            let dets = detect_at(&model, imgs, ev.dump_score_threshold, ev.chunk)?;
            let path = dir.join(file);
            write_detections(&path, &detection_records(ids, &dets))?;
            read_detections(&path)?;
        }
        let rel = |f: &str| format!("{DETECTOR_DIR}/{f}");
        self.finish(
            &mut m,
            Stage::TrainDetector,
            StageState::Complete,
            started,
            &[
                ("checkpoint", rel(DETECTOR_FILE)),
                ("loss_log", rel(DETECTOR_LOSS_FILE)),
                ("epoch_metrics", rel(EPOCH_METRICS_FILE)),
                ("detections_val", rel(VAL_DETECTIONS_FILE)),
                ("detections_test", rel(TEST_DETECTIONS_FILE)),
            ],
            None,
        )
    }

    fn run_grasp(&self) -> Result<()> {
        let started = now();
        let mut m = self.open_manifest(Stage::RunGrasp)?;
        let g = &self.config.grasp;
        let model;
        let (detector, name): (&dyn ViewDetector, &str) = if g.oracle {
            (&OracleDetector, "oracle")
        } else {
            self.require(&m, Stage::RunGrasp, Stage::TrainDetector)?;
            model = DetectorCheckpoint::load(&self.path(&format!("{DETECTOR_DIR}/{DETECTOR_FILE}")))
                .map_err(|e| missing(Stage::RunGrasp, format!("detector checkpoint: {e}")))?
                .restore(DTYPE)?;
            (&model, "model")
        };
        let dir = self.path(GRASP_DIR);
        remove_path(&dir)?;
        let seed = self.config.stage_seed("grasp");
        let mut tiers = Vec::new();
        let mut artifacts = Vec::new();
        for tier in [Tier::Plain, Tier::Complex] {
            let tier_dir = dir.join(tier.as_str());
            create_dir(&tier_dir)?;
            let run = run_tier(&g.protocol, tier, seed, detector, &g.controller, &g.rig)?;
            for (s, r) in run.summaries.iter().zip(&run.results) {
                let path = tier_dir.join(format!("trial_{:02}.jsonl", s.trial));
                write_trial_log(&path, r)?;
                if read_trial_log(&path)?.len() != r.steps_taken {
                    return Err(Error::InvalidConfig(format!("trial log {} is incomplete", path.display())));
                }
            }
            let successes = run.summaries.iter().filter(|s| s.success).count();
            let trials = run.summaries.len();
            log::info!("{} tier: {successes}/{trials} grasps", tier.as_str());
            tiers.push(TierOutcome {
                tier,
                trials,
                successes,
                success_rate: successes as f64 / trials as f64,
                results: run.summaries,
            });
            artifacts.push((tier.as_str(), format!("{GRASP_DIR}/{}", tier.as_str())));
        }
        let summary = GraspSummary {
            variant: self.config.variant,
            detector: name.into(),
            tiers,
        };
        let summary_rel = format!("{GRASP_DIR}/{GRASP_SUMMARY_FILE}");
        write_json(&self.path(&summary_rel), &summary)?;
        GraspSummary::load(&self.path(&summary_rel))?;
        artifacts.push(("summary", summary_rel));
        self.finish(&mut m, Stage::RunGrasp, StageState::Complete, started, &artifacts, None)
    }

    /// Fits the layout judge on the real training renders.
    fn fit_judge(&self) -> Result<SegmenterDiscriminator> {
        let ev = &self.config.eval;
        let cfg = crate::advsup::SegmenterConfig {
            seed: self.config.stage_seed("judge-init"),
            ..ev.judge.clone()
        };
        let judge = SegmenterDiscriminator::new(&cfg, DTYPE)?;
        let data = load_dataset(&self.split_dir(Split::Train))?;
        let images = split_images(&data, StyleDomain::Real)?;
        fit_segmenter(
            &judge,
            &images,
            &data.scenes,
            ev.judge_steps,
            ev.judge_batch,
            ev.judge_lr,
            self.config.stage_seed("judge"),
        )?;
        Ok(judge)
    }

    /// This run's metrics from its dumps and trial logs.
    pub fn method_metrics(&self) -> Result<MethodMetrics> {
        let ev = &self.config.eval;
        let (_, test_scenes, test_ids) = self.eval_split(Split::Test)?;
        let records = read_detections(&self.path(&format!("{DETECTOR_DIR}/{TEST_DETECTIONS_FILE}")))?;
        let dm = dump_metrics(&test_scenes, &test_ids, &records, ev.score_threshold)?;
        let synth = load_dataset(&self.path(SYNTH_DIR))?;
        let judge = self.fit_judge()?;
        let miou = mean_layout_miou(&judge, &any_images(&synth)?, &synth.scenes, DTYPE, ev.chunk)?;
        let grasp = GraspSummary::load(&self.path(&format!("{GRASP_DIR}/{GRASP_SUMMARY_FILE}")))?;
        Ok(MethodMetrics {
            method: self.config.variant.as_str().into(),
            runs: 1,
            precision: dm.precision,
            recall: dm.recall,
            map50: dm.map50,
            map50_95: dm.map50_95,
            center_deviation: dm.center_deviation,
            layout_miou: Some(miou),
            grasp_success_plain: grasp.rate(Tier::Plain),
            grasp_success_complex: grasp.rate(Tier::Complex),
        })
    }

    /// Evaluates this run and writes a report over it and any `others`
    /// (completed run directories).
    pub fn evaluate_with(&self, others: &[PathBuf]) -> Result<MetricsReport> {
        let _lock = RunLock::acquire(&self.run_dir)?;
        self.evaluate(others)
    }

    fn evaluate(&self, others: &[PathBuf]) -> Result<MetricsReport> {
        let started = now();
        let mut m = self.open_manifest(Stage::Evaluate)?;
        self.require(&m, Stage::Evaluate, Stage::TrainDetector)?;
        self.require(&m, Stage::Evaluate, Stage::RunGrasp)?;
        let metrics = self.method_metrics()?;
        let dir = self.path(EVAL_DIR);
        create_dir(&dir)?;
        let metrics_rel = format!("{EVAL_DIR}/{METRICS_FILE}");
        write_json(&self.path(&metrics_rel), &metrics)?;
        let mut rows = vec![metrics];
        for other in others {
            rows.push(load_run_metrics(other)?);
        }
        let report = build_report(&rows)?;
        report.write(&self.run_dir)?;
        MetricsReport::load(&self.path("report.json"))?;
        self.finish(
            &mut m,
            Stage::Evaluate,
            StageState::Complete,
            started,
            &[
                ("metrics", metrics_rel),
                ("report_json", "report.json".into()),
                ("report_csv", "report.csv".into()),
                ("report_md", "report.md".into()),
            ],
            None,
        )?;
        Ok(report)
    }
}

fn write_detector_losses(path: &Path, losses: &[DetLossRecord]) -> Result<()> {
    let mut text = String::from("step,epoch,total,heat,size,offset\n");
    for r in losses {
        text.push_str(&format!("{},{},{},{},{},{}\n", r.step, r.epoch, r.total, r.heat, r.size, r.offset));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Metrics of a completed run directory.
pub fn load_run_metrics(run_dir: &Path) -> Result<MethodMetrics> {
    let m = RunManifest::load(run_dir).map_err(|e| missing(Stage::Evaluate, format!("{}: {e}", run_dir.display())))?;
    let rel = m
        .artifact(Stage::Evaluate, "metrics")
        .ok_or_else(|| missing(Stage::Evaluate, format!("{} has no evaluated metrics", run_dir.display())))?;
    read_json(&run_dir.join(rel))
}

/// Combined report over completed run directories, written into `out`.
pub fn compare_runs(runs: &[PathBuf], out: &Path) -> Result<MetricsReport> {
    if runs.is_empty() {
        return Err(missing(Stage::Evaluate, "no completed runs given"));
    }
    let rows = runs.iter().map(|r| load_run_metrics(r)).collect::<Result<Vec<_>>>()?;
    let report = build_report(&rows)?;
    create_dir(out)?;
    report.write(out)?;
    Ok(report)
}
