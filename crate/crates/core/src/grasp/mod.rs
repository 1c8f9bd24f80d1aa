//! Planar dual-camera robot and the closed-loop visual grasp controller.

mod config;
mod control;
mod observe;
mod robot;
mod trial;

pub use config::{ControllerConfig, Rig};
pub use control::{blend, control_error, norm, step, ControlError};
pub use observe::{
    observe, predict_observation, select_target, BlindDetector, DualViewInput, GraspObservation,
    OracleDetector, ViewDetector,
};
pub use robot::RobotState;
pub use trial::{
    grasp_succeeds, read_trial_log, run_tier, run_trial, trial_setup, write_trial_log,
    FailureReason, TierRun, Tier, TrialProtocol, TrialResult, TrialSetup, TrialStep,
    TrialSummary,
};
