use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::{ControllerConfig, Rig};
use super::control::{control_error, norm, step, ControlError};
use super::observe::{observe, predict_observation, GraspObservation, ViewDetector};
use super::robot::RobotState;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::par;
use crate::rng;
use crate::scenegen::{generate_scene, LayoutScene, ObjectRecord, SceneSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    None,
    MaxSteps,
    LostTarget,
}

/// One control iteration. The error fields are absent when either view
/// lost the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStep {
    pub step: usize,
    pub observation: GraspObservation,
    pub e_local: Option<[f64; 2]>,
    pub e_global: Option<[f64; 2]>,
    pub blended: Option<[f64; 2]>,
    pub robot: RobotState,
}

impl TrialStep {
    pub fn error(&self) -> Option<ControlError> {
        Some(ControlError {
            e_local: self.e_local?,
            e_global: self.e_global?,
            blended: self.blended?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub success: bool,
    pub steps_taken: usize,
    pub failure_reason: FailureReason,
    pub error_trace: Vec<TrialStep>,
    pub final_robot: RobotState,
}

/// Whether the gripper is within `tolerance` of any grasp point of the
/// target class.
pub fn grasp_succeeds(world: &LayoutScene, robot: &RobotState, tolerance: f64) -> bool {
    let (gx, gy) = robot.gripper_world();
    world
        .objects
        .iter()
        .filter(|o| o.class_id == robot.target_class)
        .any(|o| (o.grasp_point.0 - gx).hypot(o.grasp_point.1 - gy) <= tolerance)
}

/// Observe → detect → error → move until both view errors fall within the
/// pixel tolerance, the step budget runs out, or the target stays lost for
/// `miss_limit` consecutive steps.
pub fn run_trial(
    world: &LayoutScene,
    robot0: &RobotState,
    detector: &dyn ViewDetector,
    config: &ControllerConfig,
    rig: &Rig,
) -> Result<TrialResult> {
    config.validate()?;
    let mut robot = robot0.clone();
    let mut trace = Vec::new();
    let mut misses = 0;
    for i in 0..config.max_steps {
        let views = observe(world, &robot, rig);
        let obs = predict_observation(detector, &views, robot.target_class)?;
        let err = control_error(&obs, config);
        trace.push(TrialStep {
            step: i,
            observation: obs,
            e_local: err.map(|e| e.e_local),
            e_global: err.map(|e| e.e_global),
            blended: err.map(|e| e.blended),
            robot: robot.clone(),
        });
        let Some(err) = err else {
            misses += 1;
            if misses >= config.miss_limit {
                return Ok(finish(trace, robot, false, FailureReason::LostTarget));
            }
            continue;
        };
        misses = 0;
        if norm(err.e_local) <= config.pixel_tolerance && norm(err.e_global) <= config.pixel_tolerance {
            robot.gripper_closed = true;
            let ok = grasp_succeeds(world, &robot, config.grasp_tolerance);
            return Ok(finish(trace, robot, ok, FailureReason::None));
        }
        robot = step(&robot, err.e_local, err.e_global, config, rig);
    }
    Ok(finish(trace, robot, false, FailureReason::MaxSteps))
}

fn finish(trace: Vec<TrialStep>, robot: RobotState, success: bool, reason: FailureReason) -> TrialResult {
    TrialResult {
        success,
        steps_taken: trace.len(),
        failure_reason: reason,
        error_trace: trace,
        final_robot: robot,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Plain,
    Complex,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Plain => "plain",
            Tier::Complex => "complex",
        }
    }
}

/// How trial worlds and start states are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialProtocol {
    pub trials_per_tier: usize,
    pub scene: SceneSpec,
    pub plain_clutter: f64,
    pub complex_clutter: f64,
    /// Largest start offset, per axis in world units, of the base and of
    /// the gripper from the target's grasp point.
    pub max_start_offset: f64,
}

impl Default for TrialProtocol {
    fn default() -> Self {
        TrialProtocol {
            trials_per_tier: 20,
            scene: SceneSpec::default(),
            plain_clutter: 0.0,
            complex_clutter: 1.0,
            max_start_offset: 6.0,
        }
    }
}

/// A trial's world and start state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSetup {
    pub seed: u64,
    pub world: LayoutScene,
    pub robot: RobotState,
}

/// Objects whose class appears exactly once in the scene.
fn unique_class_objects(scene: &LayoutScene) -> Vec<&ObjectRecord> {
    scene
        .objects
        .iter()
        .filter(|o| scene.objects.iter().filter(|p| p.class_id == o.class_id).count() == 1)
        .collect()
}

const SETUP_ATTEMPTS: u64 = 64;

/// Draws the world for trial `index` of a tier. The target is an object
/// whose class is unique in the scene, and the robot starts with both
/// cameras looking near it.
pub fn trial_setup(protocol: &TrialProtocol, tier: Tier, seed: u64, index: usize) -> Result<TrialSetup> {
    let clutter = match tier {
        Tier::Plain => protocol.plain_clutter,
        Tier::Complex => protocol.complex_clutter,
    };
    let spec = SceneSpec { clutter_level: clutter, ..protocol.scene.clone() };
    let base = rng::derive_indexed(rng::derive_seed(seed, tier.as_str()), "trial", index as u64);
    for attempt in 0..SETUP_ATTEMPTS {
        let world_seed = rng::derive_indexed(base, "world", attempt);
        let world = generate_scene(&spec, world_seed)?;
        let candidates = unique_class_objects(&world);
        if candidates.is_empty() {
            continue;
        }
        let mut r = rng::rng_from(rng::derive_seed(world_seed, "start"));
        let target = candidates[r.random_range(0..candidates.len())];
        let m = protocol.max_start_offset;
        let (tx, ty) = target.grasp_point;
        let (w, h) = (world.width() as f64, world.height() as f64);
        let near = |r: &mut rng::Rng| {
            (
                (tx + r.random_range(-m..=m)).clamp(0.0, w),
                (ty + r.random_range(-m..=m)).clamp(0.0, h),
            )
        };
        let base_pos = near(&mut r);
        let grip = near(&mut r);
        let robot = RobotState::new(base_pos, (grip.0 - base_pos.0, grip.1 - base_pos.1), target.class_id);
        return Ok(TrialSetup { seed: world_seed, world, robot });
    }
    Err(Error::InvalidConfig(format!(
        "no trial world with a uniquely classed object after {SETUP_ATTEMPTS} attempts"
    )))
}

/// Summary line of a trial log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub tier: Tier,
    pub trial: usize,
    pub world_seed: u64,
    pub target_class: u16,
    pub success: bool,
    pub steps_taken: usize,
    pub failure_reason: FailureReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TierRun {
    pub tier: Tier,
    pub summaries: Vec<TrialSummary>,
    pub results: Vec<TrialResult>,
}

/// Runs every trial of a tier, fanning out over trials.
pub fn run_tier(
    protocol: &TrialProtocol,
    tier: Tier,
    seed: u64,
    detector: &dyn ViewDetector,
    config: &ControllerConfig,
    rig: &Rig,
) -> Result<TierRun> {
    let runs = par::try_map_indices(protocol.trials_per_tier, |i| {
        let setup = trial_setup(protocol, tier, seed, i)?;
        let result = run_trial(&setup.world, &setup.robot, detector, config, rig)?;
        let summary = TrialSummary {
            tier,
            trial: i,
            world_seed: setup.seed,
            target_class: setup.robot.target_class,
            success: result.success,
            steps_taken: result.steps_taken,
            failure_reason: result.failure_reason,
        };
        Ok::<_, Error>((summary, result))
    })?;
    let (summaries, results) = runs.into_iter().unzip();
    Ok(TierRun { tier, summaries, results })
}

/// Writes one JSON line per control step of one trial.
pub fn write_trial_log(path: &Path, result: &TrialResult) -> Result<()> {
    jsonl::write_jsonl(path, &result.error_trace)
}

pub fn read_trial_log(path: &Path) -> Result<Vec<TrialStep>> {
    jsonl::read_jsonl(path)
}
