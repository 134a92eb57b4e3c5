//! Map navigation: height-filtered costmap, arc-lattice planner, turning-radius
//! preserving velocity clamp and the forward/backward switch gate.

pub mod dubins;
pub mod grid;
pub mod lidar;
pub mod planner;
pub mod velocity;

pub use grid::{build_costmap, Cell, OccupancyGrid};
pub use planner::{plan_path, PlannerConfig};
pub use velocity::{clamp_velocity, gate_plan, goal_reached, GateState, MotionPlan, Segment, VelocityLimits};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NavError {
    #[error("no feasible plan: {0}")]
    NoPath(&'static str),
}
