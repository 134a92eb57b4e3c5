use serde::{Deserialize, Serialize};

use crate::geometry::PlanarPose;
use crate::mission::TraceRecord;
use crate::world::PlacementRecord;

use super::perception::DetectionRecord;

/// One control-loop sample: stage, errors and the commands issued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub t: f64,
    pub stage: String,
    pub err_x: f64,
    pub err_y: f64,
    pub err_psi: f64,
    pub err_d: f64,
    pub cmd: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub t: f64,
    pub start: [f64; 3],
    pub goal: [f64; 3],
    pub ok: bool,
    pub segments: usize,
    pub switches: usize,
    pub duration: f64,
}

/// Vision debug record of one processed frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: u64,
    pub t: f64,
    pub activity: String,
    pub stacks: usize,
    /// (id, x, y, area, score)
    pub candidates: Vec<(u64, f64, f64, f64, f64)>,
    pub selected_id: Option<u64>,
    pub estimated_pose: Option<PlanarPose>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub placements: Vec<PlacementRecord>,
    pub detections: Vec<DetectionRecord>,
    /// Deviation from a perpendicular approach at the end of each final
    /// approach to a stack, degrees.
    pub perpendicularity_deg: Vec<f64>,
    pub pickups: u32,
    pub pickup_failures: u32,
    pub skipped: Vec<String>,
    pub errors: Vec<String>,
    /// Largest |omega / v| commanded while following a plan.
    pub max_nav_curvature: f64,
    pub control: Vec<ControlRow>,
    pub plans: Vec<PlanRow>,
    pub frames: Vec<FrameRecord>,
}

/// Outcome of one simulated mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    /// Every task finished and nothing was skipped.
    pub completed: bool,
    pub finished: bool,
    pub sim_time: f64,
    pub ticks: u64,
    pub bricks_placed: usize,
    pub placements: Vec<PlacementRecord>,
    pub detections: Vec<DetectionRecord>,
    pub perpendicularity_deg: Vec<f64>,
    pub pickups: u32,
    pub pickup_failures: u32,
    pub skipped: Vec<String>,
    pub completed_tasks: Vec<String>,
    pub errors: Vec<String>,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MissionReport,
    pub trace: Vec<TraceRecord>,
    pub log: RunLog,
}
