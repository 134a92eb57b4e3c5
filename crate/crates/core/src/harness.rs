//! Experiment harness: seeded batches of loading and unloading runs, their
//! aggregate metrics, and the artifact files written for each run.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{axis_angle, RigidPose};
use crate::render::{render_rgbd, write_pgm16, write_ppm, Scene};
use crate::scenario::{loading, unloading, ConfigError, NoiseSpec, Scenario};
use crate::sim::RunOutput;
use crate::world::EffectorPose;

/// Initial relative orientation range of the loading experiment, degrees.
pub const LOAD_ORIENTATION_DEG: f64 = 170.0;
/// Initial pattern orientation range of the unloading experiment, degrees.
pub const UNLOAD_ORIENTATION_DEG: f64 = 55.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Load,
    Unload,
}

/// Per-run record. Estimation fields come from the first pose detection
/// (start of alignment); placement fields from the first placed brick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub start_distance: f64,
    pub start_orientation_deg: f64,
    pub distance: Option<f64>,
    pub distance_error: Option<f64>,
    pub orientation_deg: Option<f64>,
    pub orientation_error_deg: Option<f64>,
    pub perpendicularity_deg: Option<f64>,
    pub placement_orientation_error_deg: Option<f64>,
    pub inside_fraction: Option<f64>,
    pub success: bool,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub distance_mae: Option<f64>,
    pub orientation_mae_deg: Option<f64>,
    pub placement_orientation_mae_deg: Option<f64>,
    pub max_perpendicularity_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub runs: Vec<RunRecord>,
    pub aggregates: Aggregates,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("aggregate `{0}` does not match the per-run records")]
    Inconsistent(&'static str),
}

fn mae<'a>(xs: impl Iterator<Item = &'a Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().map(|x| x.abs()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl Aggregates {
    pub fn of(runs: &[RunRecord]) -> Self {
        let successes = runs.iter().filter(|r| r.success).count();
        Self {
            runs: runs.len(),
            successes,
            success_rate: if runs.is_empty() { 0.0 } else { successes as f64 / runs.len() as f64 },
            distance_mae: mae(runs.iter().map(|r| &r.distance_error)),
            orientation_mae_deg: mae(runs.iter().map(|r| &r.orientation_error_deg)),
            placement_orientation_mae_deg: mae(runs.iter().map(|r| &r.placement_orientation_error_deg)),
            max_perpendicularity_deg: runs.iter().filter_map(|r| r.perpendicularity_deg).map(f64::abs).reduce(f64::max),
        }
    }
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => (a - b).abs() <= 1e-9 * (1.0 + a.abs()),
        _ => false,
    }
}

impl ExperimentReport {
    pub fn new(kind: ExperimentKind, seed: u64, noise: NoiseSpec, runs: Vec<RunRecord>) -> Self {
        let aggregates = Aggregates::of(&runs);
        Self { kind, seed, noise, runs, aggregates }
    }

    pub fn all_succeeded(&self) -> bool {
        self.runs.iter().all(|r| r.success)
    }

    /// Recomputes the aggregates from the runs and compares.
    pub fn check(&self) -> Result<(), ReportError> {
        let a = Aggregates::of(&self.runs);
        let g = &self.aggregates;
        if a.runs != g.runs || a.successes != g.successes {
            return Err(ReportError::Inconsistent("successes"));
        }
        if !close(Some(a.success_rate), Some(g.success_rate)) {
            return Err(ReportError::Inconsistent("success_rate"));
        }
        if !close(a.distance_mae, g.distance_mae) {
            return Err(ReportError::Inconsistent("distance_mae"));
        }
        if !close(a.orientation_mae_deg, g.orientation_mae_deg) {
            return Err(ReportError::Inconsistent("orientation_mae_deg"));
        }
        if !close(a.placement_orientation_mae_deg, g.placement_orientation_mae_deg) {
            return Err(ReportError::Inconsistent("placement_orientation_mae_deg"));
        }
        if !close(a.max_perpendicularity_deg, g.max_perpendicularity_deg) {
            return Err(ReportError::Inconsistent("max_perpendicularity_deg"));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, ReportError> {
        let r: Self = serde_json::from_str(s)?;
        r.check()?;
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Builds and runs one scenario to completion or its time budget.
pub fn run_mission(scenario: &Scenario, seed: u64) -> Result<RunOutput, ConfigError> {
    let mut sim = scenario.build(seed)?;
    sim.run();
    Ok(sim.into_output())
}

#[derive(Debug, Clone, Copy)]
struct Setup {
    run: usize,
    seed: u64,
    distance: f64,
    orientation: f64,
    bearing: f64,
}

fn setups(n: usize, seed: u64, distance: (f64, f64), orientation_deg: f64) -> Vec<Setup> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|run| Setup {
            run,
            seed: seed.wrapping_mul(1_000_003).wrapping_add(run as u64),
            distance: rng.random_range(distance.0..=distance.1),
            orientation: rng.random_range(-orientation_deg..=orientation_deg).to_radians(),
            bearing: rng.random_range(-0.3..=0.3),
        })
        .collect()
}

fn record(s: &Setup, out: &RunOutput, success: bool, kind: ExperimentKind) -> RunRecord {
    // a pattern seen square-on lies across the heading: report its deviation from that
    let orientation = |deg: f64| match kind {
        ExperimentKind::Load => deg,
        ExperimentKind::Unload => axis_angle((deg - 90.0).to_radians()).to_degrees(),
    };
    let det = out.report.detections.first();
    let placed = out.report.placements.first();
    RunRecord {
        run: s.run,
        seed: s.seed,
        start_distance: s.distance,
        start_orientation_deg: s.orientation.to_degrees(),
        distance: det.map(|d| d.distance),
        distance_error: det.map(|d| d.distance_error),
        orientation_deg: det.map(|d| orientation(d.orientation_deg)),
        orientation_error_deg: det.map(|d| d.orientation_error_deg),
        perpendicularity_deg: out.report.perpendicularity_deg.first().copied(),
        placement_orientation_error_deg: placed.map(|p| p.yaw_error.to_degrees()),
        inside_fraction: placed.map(|p| p.inside_fraction),
        success,
        duration: out.report.sim_time,
    }
}

/// Loading experiment: `n` seeded single-pickup runs with the stack's
/// relative orientation drawn uniformly in +-170 degrees.
pub fn experiment_load(n: usize, seed: u64, noise: NoiseSpec, max_sim_time: Option<f64>) -> ExperimentReport {
    let runs = setups(n, seed, (2.5, 4.0), LOAD_ORIENTATION_DEG)
        .into_par_iter()
        .map(|s| {
            let mut sc = loading(s.distance, s.orientation, s.bearing, noise);
            if let Some(t) = max_sim_time {
                sc.sim.max_sim_time = t;
            }
            let out = run_mission(&sc, s.seed).expect("loading preset is valid");
            let ok = out.report.completed && out.report.pickups >= 1;
            record(&s, &out, ok, ExperimentKind::Load)
        })
        .collect();
    ExperimentReport::new(ExperimentKind::Load, seed, noise, runs)
}

/// Unloading experiment: `n` seeded single-drop runs with the pattern's
/// orientation drawn uniformly in +-55 degrees. A run succeeds when at least
/// half the brick lies inside the pattern.
pub fn experiment_unload(n: usize, seed: u64, noise: NoiseSpec, max_sim_time: Option<f64>) -> ExperimentReport {
    let runs = setups(n, seed, (2.0, 3.0), UNLOAD_ORIENTATION_DEG)
        .into_par_iter()
        .map(|s| {
            let mut sc = unloading(s.distance, s.orientation, s.bearing, noise);
            if let Some(t) = max_sim_time {
                sc.sim.max_sim_time = t;
            }
            let out = run_mission(&sc, s.seed).expect("unloading preset is valid");
            let inside = out.report.placements.first().map(|p| p.inside_fraction >= 0.5).unwrap_or(false);
            record(&s, &out, out.report.completed && inside, ExperimentKind::Unload)
        })
        .collect();
    ExperimentReport::new(ExperimentKind::Unload, seed, noise, runs)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}

#[derive(Serialize)]
struct ControlCsv<'a> {
    t: f64,
    stage: &'a str,
    err_x: f64,
    err_y: f64,
    err_psi: f64,
    err_d: f64,
    dx: f64,
    dy: f64,
    dz: f64,
    dpitch: f64,
    dyaw: f64,
}

#[derive(Serialize)]
struct PlanCsv {
    t: f64,
    start_x: f64,
    start_y: f64,
    start_yaw: f64,
    goal_x: f64,
    goal_y: f64,
    goal_yaw: f64,
    ok: bool,
    segments: usize,
    switches: usize,
    duration: f64,
}

#[derive(Serialize)]
struct PlacementCsv {
    index: usize,
    color: String,
    along: f64,
    across: f64,
    z: f64,
    yaw_error_deg: f64,
    inside_fraction: f64,
}

/// Writes `report.json`, `trace.jsonl`, `metrics.csv` (one row per placed
/// brick), `control.csv` and `plans.csv` for one mission run.
pub fn write_run(dir: &Path, out: &RunOutput) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&out.report)?)?;
    write_jsonl(&dir.join("trace.jsonl"), &out.trace)?;
    write_csv(
        &dir.join("metrics.csv"),
        out.report.placements.iter().enumerate().map(|(i, p)| PlacementCsv {
            index: i,
            color: format!("{:?}", p.color),
            along: p.along,
            across: p.across,
            z: p.z,
            yaw_error_deg: p.yaw_error.to_degrees(),
            inside_fraction: p.inside_fraction,
        }),
    )?;
    write_csv(
        &dir.join("control.csv"),
        out.log.control.iter().map(|c| ControlCsv {
            t: c.t,
            stage: &c.stage,
            err_x: c.err_x,
            err_y: c.err_y,
            err_psi: c.err_psi,
            err_d: c.err_d,
            dx: c.cmd[0],
            dy: c.cmd[1],
            dz: c.cmd[2],
            dpitch: c.cmd[3],
            dyaw: c.cmd[4],
        }),
    )?;
    write_csv(
        &dir.join("plans.csv"),
        out.log.plans.iter().map(|p| PlanCsv {
            t: p.t,
            start_x: p.start[0],
            start_y: p.start[1],
            start_yaw: p.start[2],
            goal_x: p.goal[0],
            goal_y: p.goal[1],
            goal_yaw: p.goal[2],
            ok: p.ok,
            segments: p.segments,
            switches: p.switches,
            duration: p.duration,
        }),
    )
}

/// Writes `report.json` and `metrics.csv` (one row per run).
pub fn write_experiment(dir: &Path, report: &ExperimentReport) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report.to_json())?;
    write_csv(&dir.join("metrics.csv"), &report.runs)
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write snapshot: {0}")]
    Io(#[from] io::Error),
}

/// Renders the scenario from the given base and arm pose (noiseless) and
/// writes `label.ppm` and `depth.pgm` into `dir`.
pub fn write_snapshot(scenario: &Scenario, base: RigidPose, arm: Option<EffectorPose>, dir: &Path) -> Result<(), SnapshotError> {
    scenario.validate()?;
    let mut world = scenario.world()?;
    world.base = base;
    if let Some(a) = arm {
        world.effector = a;
    }
    let (labels, depth) = render_rgbd(&Scene::from_world(&world), &world.camera_in_map(), &scenario.sim.intrinsics);
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(fs::File::create(dir.join("label.ppm"))?);
    write_ppm(&mut w, &labels)?;
    w.flush()?;
    let mut w = BufWriter::new(fs::File::create(dir.join("depth.pgm"))?);
    write_pgm16(&mut w, &depth)?;
    w.flush()?;
    Ok(())
}
