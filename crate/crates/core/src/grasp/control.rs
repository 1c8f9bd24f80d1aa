use serde::{Deserialize, Serialize};

use super::config::{ControllerConfig, Rig};
use super::observe::GraspObservation;
use super::robot::RobotState;

/// Per-view pixel errors (box center minus grasp reference) and their
/// blend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlError {
    pub e_local: [f64; 2],
    pub e_global: [f64; 2],
    pub blended: [f64; 2],
}

pub fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

pub fn blend(e_local: [f64; 2], e_global: [f64; 2], alpha: f64) -> [f64; 2] {
    [
        alpha * e_local[0] + (1.0 - alpha) * e_global[0],
        alpha * e_local[1] + (1.0 - alpha) * e_global[1],
    ]
}

/// `None` when either view lost the target.
pub fn control_error(obs: &GraspObservation, config: &ControllerConfig) -> Option<ControlError> {
    let (local, global) = (obs.local_box()?, obs.global_box()?);
    let offset = |b: crate::scenegen::BBox, r: (f64, f64)| {
        let (cx, cy) = b.center();
        [cx - r.0, cy - r.1]
    };
    let e_local = offset(local, config.grasp_reference_local);
    let e_global = offset(global, config.grasp_reference_global);
    Some(ControlError {
        e_local,
        e_global,
        blended: blend(e_local, e_global, config.alpha),
    })
}

/// One proportional move. The base follows the global error; the gripper
/// follows the local error in world coordinates, with the arm absorbing the
/// base motion so the two loops stay decoupled. Both end up inside the
/// workspace.
pub fn step(robot: &RobotState, e_local: [f64; 2], e_global: [f64; 2], config: &ControllerConfig, rig: &Rig) -> RobotState {
    let (ww, wh) = rig.world_size;
    let clamp = |p: (f64, f64)| (p.0.clamp(0.0, ww), p.1.clamp(0.0, wh));
    let (bx, by) = robot.base_position;
    let base = clamp((
        bx + config.gain_global * e_global[0] / rig.global.scale.0,
        by + config.gain_global * e_global[1] / rig.global.scale.1,
    ));
    let (gx, gy) = robot.gripper_world();
    let dl = (
        config.gain_local * e_local[0] / rig.local.scale.0,
        config.gain_local * e_local[1] / rig.local.scale.1,
    );
    let wanted = (gx + dl.0, gy + dl.1);
    let gripper = clamp(wanted);
    // The offset is updated by deltas rather than recomputed from world
    // positions, so a zero error leaves it bit-for-bit unchanged.
    let offset = |old: f64, d: f64, want: f64, got: f64, base_old: f64, base_new: f64| {
        if got == want {
            old + d - (base_new - base_old)
        } else {
            got - base_new
        }
    };
    let (ox, oy) = robot.gripper_offset;
    RobotState {
        base_position: base,
        gripper_offset: (
            offset(ox, dl.0, wanted.0, gripper.0, bx, base.0),
            offset(oy, dl.1, wanted.1, gripper.1, by, base.1),
        ),
        ..robot.clone()
    }
}
