//! Simulation and autonomy stack for a wall-building ground robot.

pub mod geometry;
pub mod world;
pub mod render;
pub mod control;
pub mod vision;
pub mod nav;
pub mod mission;
pub mod sim;
pub mod scenario;
pub mod harness;
