use serde::{Deserialize, Serialize};

/// Planar robot: a mobile base and a gripper offset from it, both in world
/// units (scene pixels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub base_position: (f64, f64),
    pub gripper_offset: (f64, f64),
    pub gripper_closed: bool,
    pub target_class: u16,
}

impl RobotState {
    pub fn new(base_position: (f64, f64), gripper_offset: (f64, f64), target_class: u16) -> Self {
        RobotState {
            base_position,
            gripper_offset,
            gripper_closed: false,
            target_class,
        }
    }

    pub fn gripper_world(&self) -> (f64, f64) {
        (
            self.base_position.0 + self.gripper_offset.0,
            self.base_position.1 + self.gripper_offset.1,
        )
    }
}
