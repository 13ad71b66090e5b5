//! Seedable navigation world: arena, boxes, pedestrians, a unicycle robot
//! and a raycast depth camera.

mod env;
pub mod geometry;
mod reward;
mod spec;

pub use env::{collision_check, Env, Observation, Outcome, Pedestrian, RobotState, StepResult, TraceRow, World};
pub use geometry::{wrap_angle, BoxObstacle};
pub use reward::{compute_reward, RewardConfig};
pub use spec::{PedestrianSpec, SimConfig, WorldSpec, PEDESTRIAN_SPEED};
