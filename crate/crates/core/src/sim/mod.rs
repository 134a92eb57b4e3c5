//! Deterministic time-stepped orchestration of the world, the sensors and the
//! autonomy stack.

mod config;
mod kinematics;
mod perception;
mod report;

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::TAU;
use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;

use nalgebra::{Isometry3, Point3, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{
    approach_command, check_reachability, filter_step, perpendicularity_error, ApproachGains, ControlError, DistanceFilter,
    EffectorDelta, ServoContext, ServoObservation, ServoStage, ServoSupervisor, ServoTarget,
};
use crate::geometry::{axis_angle_diff, normalize_angle, Frame as FrameId, FrameTransform, PlanarPose, RigidPose};
use crate::mission::{ApproachTarget, Mission, MissionAction, MissionEvent, TraceRecord};
use crate::nav::lidar::{simulate_scan, ScanBuffer};
use crate::nav::{clamp_velocity, gate_plan, goal_reached, plan_path, GateState, MotionPlan, NavError, OccupancyGrid};
use crate::render::{apply_sensor_noise, render_rgbd, write_pgm16, write_ppm, Scene};
use crate::vision::{
    detect_footprint, detect_stacks, estimate_footprint_pose, estimate_patch_pose, extract_patch_candidates_rectified, score, to_map_frame,
    track_and_select, PatchCandidate, TrackerState,
};
use crate::world::{attach_brick, contact_triggered, ground_truth_patch_pose, place_brick, BrickColor, EffectorPose, WorldState};

pub use config::{NoiseParams, SimConfig, Timeouts};
pub use kinematics::{
    clamp_delta, integrate_base, interpolate_effector, localization_estimate, move_effector, EffectorLimits, LocalizationDrift,
    LocalizationNoise,
};
pub use perception::{from_base, mean_pose, project_target, relative_to, DetectionRecord, Frame};
pub use report::{ControlRow, FrameRecord, MissionReport, PlanRow, RunLog, RunOutput};

/// A mission event stamped with the simulated time it was raised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub t: f64,
    pub event: MissionEvent,
}

/// Area-navigation goals: one per stack color and one in front of the wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoints {
    pub stacks: BTreeMap<BrickColor, RigidPose>,
    pub wall: RigidPose,
}

struct Nav {
    goal: RigidPose,
    alignment: bool,
    plan: Option<MotionPlan>,
    gate: GateState,
    plans: u32,
    failures: u32,
    retry_at: f64,
    replan_at: f64,
    started: f64,
}

struct Approach {
    target: ApproachTarget,
    cell: Option<RigidPose>,
    is_final: bool,
    d_r: f64,
    filter: DistanceFilter,
    updates: u32,
    cmd: (f64, f64),
    seen: bool,
    announced: bool,
    misses: u32,
    searched: f64,
    started: f64,
    last_patch: Option<PlanarPose>,
}

struct Detect {
    target: ApproachTarget,
    estimates: Vec<PlanarPose>,
    misses: u32,
    started: f64,
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Move(EffectorPose, f64),
    StoreInSlot(usize),
    TakeFromSlot(usize),
}

enum After {
    Emit(MissionEvent),
    Servo(ServoKind),
}

struct Script {
    steps: VecDeque<Step>,
    motion: Option<(EffectorPose, EffectorPose, f64, f64)>,
    after: Option<After>,
}

#[derive(Debug, Clone, Copy)]
enum ServoKind {
    Pickup { slot: usize },
    Drop { slot: usize, target: RigidPose },
}

struct Servo {
    sup: ServoSupervisor,
    kind: ServoKind,
    started: f64,
}

enum Activity {
    Idle,
    Navigate(Nav),
    Approach(Approach),
    Detect(Detect),
    Script(Script),
    Servo(Servo),
}

impl Activity {
    fn name(&self) -> &'static str {
        match self {
            Activity::Idle => "idle",
            Activity::Navigate(_) => "navigate",
            Activity::Approach(a) if a.is_final => "final_approach",
            Activity::Approach(_) => "initial_approach",
            Activity::Detect(_) => "pose_detection",
            Activity::Script(_) => "arm",
            Activity::Servo(_) => "servo",
        }
    }
}

enum Flow {
    Continue,
    Replace(Activity),
}

/// Last tracked patch: its base-frame point and where it was seen.
#[derive(Debug, Clone, Copy)]
struct PatchMemory {
    point_map: Point3<f64>,
    image: (f64, f64),
}

pub struct Sim {
    pub cfg: SimConfig,
    pub world: WorldState,
    pub mission: Mission,
    pub noise: NoiseParams,
    pub arena: [f64; 4],
    pub waypoints: Waypoints,
    pub tick: u64,
    pub trace: Vec<TraceRecord>,
    pub events: Vec<SimEvent>,
    pub log: RunLog,
    /// Frames and debug records are written here when set.
    pub dump_dir: Option<PathBuf>,
    rng_sensor: ChaCha8Rng,
    rng_loc: ChaCha8Rng,
    drift: LocalizationDrift,
    scans: ScanBuffer,
    tracker: TrackerState,
    activity: Activity,
    pending: VecDeque<MissionEvent>,
    pending_delta: EffectorDelta,
    patch_memory: Option<PatchMemory>,
    frame_index: u64,
    finished: bool,
}

fn rect_center(c: &PatchCandidate) -> crate::geometry::ImagePoint {
    crate::geometry::ImagePoint::new(c.rect.center.x, c.rect.center.y)
}

fn stream(seed: u64, label: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(label);
    r
}

impl Sim {
    pub fn new(cfg: SimConfig, world: WorldState, mission: Mission, noise: NoiseParams, seed: u64, arena: [f64; 4], waypoints: Waypoints) -> Self {
        let mut rng_loc = stream(seed, 2);
        let drift = LocalizationDrift::new(noise.localization, cfg.localization_tau, &mut rng_loc);
        let mut sim = Self {
            tracker: TrackerState::new(cfg.tracker),
            scans: ScanBuffer::new(cfg.scan_buffer),
            cfg,
            world,
            mission,
            noise,
            arena,
            waypoints,
            tick: 0,
            trace: Vec::new(),
            events: Vec::new(),
            log: RunLog::default(),
            dump_dir: None,
            rng_sensor: stream(seed, 1),
            rng_loc,
            drift,
            activity: Activity::Idle,
            pending: VecDeque::new(),
            pending_delta: EffectorDelta::default(),
            patch_memory: None,
            frame_index: 0,
            finished: false,
        };
        sim.scan();
        let acts = sim.mission.start();
        sim.trace.push(sim.mission.record(0.0, "Start"));
        for a in acts {
            sim.begin(a, 0.0);
        }
        sim
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.dt
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn activity_name(&self) -> &'static str {
        self.activity.name()
    }

    /// Localization output: the true pose plus the current drift.
    pub fn estimated_pose(&self) -> RigidPose {
        self.drift.apply(&self.world.base)
    }

    fn emit(&mut self, e: MissionEvent) {
        self.events.push(SimEvent { t: self.time(), event: e.clone() });
        self.pending.push_back(e);
    }

    /// Advances the simulation by one `dt` and returns the events raised.
    pub fn tick(&mut self) -> Vec<SimEvent> {
        let t = self.time();
        let first_new = self.events.len();
        // (1) mission consumes pending events
        while let Some(e) = self.pending.pop_front() {
            match self.mission.step(&e) {
                Ok(acts) => {
                    self.trace.push(self.mission.record(t, e.name()));
                    for a in acts {
                        self.begin(a, t);
                    }
                }
                Err(err) => self.log.errors.push(format!("t={t:.2}: {err}")),
            }
        }
        // (2)-(4) commands, clamp and gate, integration
        let mut act = std::mem::replace(&mut self.activity, Activity::Idle);
        let flow = match &mut act {
            Activity::Navigate(n) => self.drive_nav(n, t),
            Activity::Approach(a) => self.drive_approach(a),
            Activity::Script(s) => self.run_script(s, t),
            _ => Flow::Continue,
        };
        if let Flow::Replace(a) = flow {
            act = a;
        }
        self.apply_effector(&mut act);
        // (5) camera frame
        if self.tick % self.cfg.camera_ticks() == 0 {
            let flow = match &mut act {
                Activity::Approach(a) => self.frame_approach(a, t),
                Activity::Detect(d) => self.frame_detect(d, t),
                Activity::Servo(s) => self.frame_servo(s, t),
                _ => Flow::Continue,
            };
            if let Flow::Replace(a) = flow {
                act = a;
            }
        }
        // (6) contact
        if let Activity::Servo(s) = &mut act {
            if let Flow::Replace(a) = self.check_contact(s) {
                act = a;
            }
        }
        self.activity = act;
        self.tick += 1;
        self.world.clock = self.time();
        if self.tick % self.cfg.lidar_ticks() == 0 {
            self.scan();
        }
        if self.tick % self.cfg.localization_ticks() == 0 {
            self.drift.advance(self.cfg.localization_period, &mut self.rng_loc);
        }
        self.events[first_new..].to_vec()
    }

    /// Runs until the mission finishes or the time budget is spent.
    pub fn run(&mut self) -> MissionReport {
        while !self.finished && self.time() < self.cfg.max_sim_time - 1e-9 {
            self.tick();
        }
        self.report()
    }

    pub fn report(&self) -> MissionReport {
        let completed = self.finished && self.mission.skipped.is_empty() && self.mission.is_done();
        MissionReport {
            completed,
            finished: self.finished,
            sim_time: self.time(),
            ticks: self.tick,
            bricks_placed: self.world.placed.len(),
            placements: self.log.placements.clone(),
            detections: self.log.detections.clone(),
            perpendicularity_deg: self.log.perpendicularity_deg.clone(),
            pickups: self.log.pickups,
            pickup_failures: self.log.pickup_failures,
            skipped: self.log.skipped.clone(),
            completed_tasks: self.mission.completed.iter().map(|t| t.to_string()).collect(),
            errors: self.log.errors.clone(),
        }
    }

    pub fn into_output(self) -> RunOutput {
        RunOutput { report: self.report(), trace: self.trace, log: self.log }
    }

    fn scan(&mut self) {
        let pts = simulate_scan(&self.world.boxes(), &self.world.base, &self.cfg.lidar);
        let pts = if self.noise.localization.is_off() {
            pts
        } else {
            let t = self.estimated_pose().to_isometry() * self.world.base.to_isometry().inverse();
            pts.into_iter().map(|p| t * p).collect()
        };
        self.scans.push(pts);
    }

    fn begin(&mut self, a: MissionAction, t: f64) {
        use MissionAction as A;
        let next = match a {
            A::NavigateToStacks(c) => self.area_nav(self.waypoints.stacks.get(&c).copied(), t),
            A::NavigateToWall => self.area_nav(Some(self.waypoints.wall), t),
            A::InitialApproach(target) => {
                let d_r = match target {
                    ApproachTarget::Stack(_) => self.cfg.stack_standoff,
                    ApproachTarget::Footprint => self.cfg.wall_standoff,
                };
                Activity::Approach(self.new_approach(target, None, false, d_r, t))
            }
            A::DetectPose(target) => {
                self.tracker.reset();
                self.patch_memory = None;
                Activity::Detect(Detect { target, estimates: Vec::new(), misses: 0, started: t })
            }
            A::Navigate(goal) => Activity::Navigate(self.new_nav(goal, true, t)),
            A::FinalApproach { target, cell } => {
                let d_r = if cell.is_some() { self.cfg.cell_standoff } else { self.cfg.patch_standoff };
                Activity::Approach(self.new_approach(target, cell, true, d_r, t))
            }
            A::Pickup { slot, .. } => {
                let sup = ServoSupervisor::new(
                    ServoTarget::Pickup { brick_height: self.world.bricks.brick_height() },
                    self.cfg.servo,
                    self.cfg.servo_tol,
                );
                Activity::Servo(Servo { sup, kind: ServoKind::Pickup { slot }, started: t })
            }
            A::Drop { slot, target, .. } => {
                let view = self.drop_view_pose(&target);
                let half = self.cfg.basket_op_time / 2.0;
                Activity::Script(Script {
                    steps: VecDeque::from([Step::Move(self.cfg.slot_pose(slot), half), Step::TakeFromSlot(slot), Step::Move(view, half)]),
                    motion: None,
                    after: Some(After::Servo(ServoKind::Drop { slot, target })),
                })
            }
            A::MemorizeWall(_) => return,
            A::Skipped(task) => {
                self.log.skipped.push(task.to_string());
                return;
            }
            A::Finished => {
                self.finished = true;
                Activity::Idle
            }
        };
        self.pending_delta = EffectorDelta::default();
        self.activity = next;
    }

    fn area_nav(&mut self, goal: Option<RigidPose>, t: f64) -> Activity {
        match goal {
            Some(g) if !self.cfg.skip_area_navigation => Activity::Navigate(self.new_nav(g, false, t)),
            _ => {
                self.emit(MissionEvent::GoalReached);
                Activity::Idle
            }
        }
    }

    fn new_nav(&self, goal: RigidPose, alignment: bool, t: f64) -> Nav {
        Nav { goal, alignment, plan: None, gate: self.cfg.gate, plans: 0, failures: 0, retry_at: t, replan_at: t, started: t }
    }

    fn new_approach(&self, target: ApproachTarget, cell: Option<RigidPose>, is_final: bool, d_r: f64, t: f64) -> Approach {
        Approach {
            target,
            cell,
            is_final,
            d_r,
            filter: DistanceFilter::new(self.cfg.filter_q, self.cfg.filter_r),
            updates: 0,
            cmd: (0.0, 0.0),
            seen: false,
            announced: false,
            misses: 0,
            searched: 0.0,
            started: t,
            last_patch: None,
        }
    }

    fn drive_base(&mut self, v: f64, omega: f64, dt: f64) {
        let (v, w) = clamp_velocity(v, omega, &self.cfg.limits);
        self.world.base = integrate_base(&self.world.base, v, w, dt);
    }

    fn costmap(&self) -> OccupancyGrid {
        let [x0, y0, x1, y1] = self.arena;
        let mut g = OccupancyGrid::covering(x0, y0, x1, y1, self.cfg.costmap_resolution);
        g.insert_points(&self.scans.points(), self.cfg.z_low, self.cfg.z_high);
        g
    }

    fn plan(&mut self, start: &RigidPose, goal: &RigidPose, t: f64) -> Result<MotionPlan, NavError> {
        let grid = self.costmap();
        let r = plan_path(&grid, start, goal, &self.cfg.limits, &self.cfg.planner);
        let (segments, switches, duration) = r.as_ref().map(|p| (p.segments.len(), p.switch_count(), p.duration())).unwrap_or((0, 0, 0.0));
        self.log.plans.push(PlanRow {
            t,
            start: [start.x, start.y, start.yaw],
            goal: [goal.x, goal.y, goal.yaw],
            ok: r.is_ok(),
            segments,
            switches,
            duration,
        });
        r
    }

    fn drive_nav(&mut self, n: &mut Nav, t: f64) -> Flow {
        let reached = if n.alignment { MissionEvent::AlignmentReached } else { MissionEvent::GoalReached };
        if t - n.started > self.cfg.timeouts.navigation {
            self.emit(MissionEvent::Timeout);
            return Flow::Replace(Activity::Idle);
        }
        let est = self.estimated_pose();
        let (xy, yaw) = (self.cfg.planner.xy_tol, self.cfg.planner.yaw_tol);
        let done_plan = n.plan.as_ref().is_none_or(|p| p.is_finished());
        if done_plan {
            // tolerance widens after repeated replans so jitter cannot stall
            let widen = match n.plans {
                0 | 1 => 1.0,
                2 => 2.0,
                _ => 3.0,
            };
            if goal_reached(&est, &n.goal, xy * widen, yaw * widen) {
                self.emit(reached);
                return Flow::Replace(Activity::Idle);
            }
            n.plan = None;
            if t < n.retry_at {
                return Flow::Continue;
            }
            if n.plans >= 6 {
                self.emit(MissionEvent::Timeout);
                return Flow::Replace(Activity::Idle);
            }
            match self.plan(&est, &n.goal, t) {
                Ok(p) => {
                    n.plans += 1;
                    n.plan = Some(p);
                    n.replan_at = t + 2.0;
                }
                Err(_) => {
                    n.failures += 1;
                    n.retry_at = t + 1.0;
                    if n.failures > 5 {
                        self.emit(MissionEvent::Timeout);
                        return Flow::Replace(Activity::Idle);
                    }
                    return Flow::Continue;
                }
            }
        } else if t >= n.replan_at && n.plan.as_ref().is_some_and(|p| p.duration() > 1.5) {
            n.replan_at = t + 2.0;
            if let Ok(p) = self.plan(&est, &n.goal, t) {
                n.plan = Some(p);
            }
        }
        let dt = self.cfg.dt;
        let plan = n.plan.as_mut().expect("plan present");
        let head = plan.head();
        let cmd = gate_plan(plan, &mut n.gate, dt);
        if head.is_some_and(|h| h != (0.0, 0.0)) && cmd == (0.0, 0.0) {
            return Flow::Continue;
        }
        let mut rem = dt;
        while rem > 1e-12 {
            let Some(seg) = n.plan.as_ref().and_then(|p| p.segments.first().copied()) else { break };
            let h = rem.min(seg.duration);
            let (v, w) = clamp_velocity(seg.v, seg.omega, &self.cfg.limits);
            if w != 0.0 {
                let k = if v == 0.0 { f64::INFINITY } else { (w / v).abs() };
                self.log.max_nav_curvature = self.log.max_nav_curvature.max(k);
            }
            self.world.base = integrate_base(&self.world.base, v, w, h);
            n.plan.as_mut().expect("plan present").advance(h);
            rem -= h;
        }
        Flow::Continue
    }

    fn drive_approach(&mut self, a: &mut Approach) -> Flow {
        let dt = self.cfg.dt;
        if !a.seen && !a.is_final && a.misses > 0 {
            a.searched += self.cfg.search_omega * dt;
            if a.searched > TAU {
                self.emit(MissionEvent::Timeout);
                return Flow::Replace(Activity::Idle);
            }
            self.drive_base(0.0, self.cfg.search_omega, dt);
            return Flow::Continue;
        }
        let (v, w) = a.cmd;
        self.drive_base(v, w, dt);
        Flow::Continue
    }

    fn apply_effector(&mut self, act: &mut Activity) {
        if self.pending_delta.is_zero() {
            return;
        }
        match move_effector(&mut self.world, &self.pending_delta, &self.cfg.effector) {
            Ok(done) => {
                let p = &mut self.pending_delta;
                p.dx -= done.dx;
                p.dy -= done.dy;
                p.dz -= done.dz;
                p.dpitch -= done.dpitch;
                p.dyaw -= done.dyaw;
                // pitch and height saturate at their limits
                if done.dpitch == 0.0 {
                    p.dpitch = 0.0;
                }
                if done.dz.abs() < 1e-12 {
                    p.dz = 0.0;
                }
                if p.dx.abs() < 1e-12 && p.dy.abs() < 1e-12 && p.dz.abs() < 1e-12 && p.dpitch.abs() < 1e-12 && p.dyaw.abs() < 1e-12 {
                    *p = EffectorDelta::default();
                }
            }
            Err(ControlError::OutOfEnvelope) => {
                self.pending_delta = EffectorDelta::default();
                if let Activity::Servo(s) = act {
                    let ev = match s.kind {
                        ServoKind::Pickup { .. } => MissionEvent::PickupFailed,
                        ServoKind::Drop { .. } => MissionEvent::Timeout,
                    };
                    *act = self.abort_servo(s.kind, ev);
                }
            }
            Err(_) => self.pending_delta = EffectorDelta::default(),
        }
    }

    fn run_script(&mut self, s: &mut Script, t: f64) -> Flow {
        loop {
            if let Some((from, to, t0, dur)) = s.motion {
                let f = if dur > 0.0 { ((t + self.cfg.dt - t0) / dur).min(1.0) } else { 1.0 };
                self.world.effector = interpolate_effector(&from, &to, f);
                if f < 1.0 {
                    return Flow::Continue;
                }
                s.motion = None;
            }
            let Some(step) = s.steps.pop_front() else { break };
            match step {
                Step::Move(to, dur) => s.motion = Some((self.world.effector, to, t, dur)),
                Step::StoreInSlot(i) => {
                    if let Some(slot) = self.world.basket.slots.get_mut(i) {
                        *slot = self.world.attached.take();
                    }
                    self.world.magnet_on = false;
                }
                Step::TakeFromSlot(i) => {
                    let b = self.world.basket.slots.get_mut(i).and_then(|s| s.take());
                    if b.is_none() {
                        s.after = None;
                        s.steps.clear();
                        let back = self.cfg.observe_pose;
                        s.steps.push_back(Step::Move(back, self.cfg.basket_op_time / 2.0));
                        s.after = Some(After::Emit(MissionEvent::BasketEmpty));
                        continue;
                    }
                    self.world.attached = b;
                    self.world.magnet_on = true;
                }
            }
        }
        match s.after.take() {
            Some(After::Emit(e)) => {
                self.emit(e);
                Flow::Replace(Activity::Idle)
            }
            Some(After::Servo(kind)) => {
                let h = self.world.bricks.brick_height();
                let target = match kind {
                    ServoKind::Pickup { .. } => ServoTarget::Pickup { brick_height: h },
                    ServoKind::Drop { target, .. } => ServoTarget::Drop { surface: target.z, brick_height: h },
                };
                Flow::Replace(Activity::Servo(Servo { sup: ServoSupervisor::new(target, self.cfg.servo, self.cfg.servo_tol), kind, started: t }))
            }
            None => Flow::Replace(Activity::Idle),
        }
    }

    fn script(&self, steps: Vec<Step>, ev: MissionEvent) -> Activity {
        Activity::Script(Script { steps: steps.into(), motion: None, after: Some(After::Emit(ev)) })
    }

    fn lift_pose(&self) -> EffectorPose {
        let mut p = self.world.effector;
        p.z += 0.3;
        p
    }

    /// Arm back to the observation pose, returning a held brick to its slot.
    fn abort_servo(&mut self, kind: ServoKind, ev: MissionEvent) -> Activity {
        self.pending_delta = EffectorDelta::default();
        let half = self.cfg.basket_op_time / 2.0;
        let mut steps = vec![Step::Move(self.lift_pose(), 1.0)];
        if let (ServoKind::Drop { slot, .. }, Some(_)) = (kind, self.world.attached) {
            steps.push(Step::Move(self.cfg.slot_pose(slot), half));
            steps.push(Step::StoreInSlot(slot));
        } else {
            self.world.magnet_on = false;
        }
        steps.push(Step::Move(self.cfg.observe_pose, half));
        self.script(steps, ev)
    }

    /// Arm pose that brings a target cell into view before the drop servo.
    fn drop_view_pose(&self, target: &RigidPose) -> EffectorPose {
        let tb = relative_to(&self.estimated_pose(), target);
        let bearing = tb.y.atan2(tb.x);
        let reach = self.cfg.effector.reach;
        let r = (tb.x.hypot(tb.y) - 0.15).clamp(reach.r_min + 0.05, reach.r_max - 0.05);
        EffectorPose { x: r * bearing.cos(), y: r * bearing.sin(), z: target.z + self.world.bricks.brick_height() + 0.6, pitch: 1.2, yaw: bearing }
    }

    fn capture(&mut self) -> Frame {
        let k = self.cfg.intrinsics;
        let scene = Scene::from_world(&self.world);
        let (labels, depth) = render_rgbd(&scene, &self.world.camera_in_map(), &k);
        let (labels, depth) =
            if self.noise.sensor.is_off() { (labels, depth) } else { apply_sensor_noise(&labels, &depth, &mut self.rng_sensor, &self.noise.sensor) };
        let frame = Frame { labels, depth, cam_base: self.world.camera.camera_in_base(&self.world.effector), k };
        self.frame_index += 1;
        if let Some(dir) = &self.dump_dir {
            let stem = dir.join(format!("frame_{:05}", self.frame_index));
            let write = || -> std::io::Result<()> {
                fs::create_dir_all(dir)?;
                write_ppm(&mut BufWriter::new(fs::File::create(stem.with_extension("ppm"))?), &frame.labels)?;
                write_pgm16(&mut BufWriter::new(fs::File::create(stem.with_extension("pgm"))?), &frame.depth)
            };
            if let Err(e) = write() {
                self.log.errors.push(format!("frame dump: {e}"));
            }
        }
        frame
    }

    fn record_frame(&mut self, stacks: usize, cands: &[PatchCandidate], selected: Option<u64>, est: Option<PlanarPose>) {
        if self.dump_dir.is_none() {
            return;
        }
        let w = self.cfg.scoring;
        self.log.frames.push(FrameRecord {
            index: self.frame_index,
            t: self.time(),
            activity: self.activity_name_for_log(),
            stacks,
            candidates: cands.iter().map(|c| (c.id, c.position.x, c.position.y, c.area, score(c, &w))).collect(),
            selected_id: selected,
            estimated_pose: est,
        });
    }

    fn activity_name_for_log(&self) -> String {
        format!("{:?}/{:?}", self.mission.top, self.mission.sub)
    }

    /// Tracks the patch on the named stack through one frame, compensating
    /// the image shift caused by the camera's own motion.
    fn track_patch(&mut self, frame: &Frame, color: BrickColor) -> (usize, Option<PatchCandidate>) {
        let stacks = detect_stacks(&frame.labels, &frame.k, color, &self.cfg.detect);
        let Some(stack) = stacks.iter().max_by(|a, b| a.area.total_cmp(&b.area)) else {
            self.track_and_select_record(Vec::new(), 0);
            return (0, None);
        };
        let cands = extract_patch_candidates_rectified(&frame.labels, &frame.camera(), &stack.hull, &self.cfg.detect);
        if let Some(m) = self.patch_memory {
            let cam_map = self.world.base_isometry() * frame.cam_base;
            if let Some(p) = crate::geometry::PinholeCamera::new(frame.k, cam_map).project(&m.point_map) {
                self.tracker.shift_tracks(p.x - m.image.0, p.y - m.image.1);
            }
        }
        let sel = self.track_and_select_record(cands, stacks.len());
        self.patch_memory = sel.as_ref().and_then(|c| {
            let p = frame.point_at(rect_center(&c))?;
            Some(PatchMemory { point_map: self.world.base_isometry() * p, image: (c.position.x, c.position.y) })
        });
        (stacks.len(), sel)
    }

    fn track_and_select_record(&mut self, cands: Vec<PatchCandidate>, stacks: usize) -> Option<PatchCandidate> {
        let all = if self.dump_dir.is_some() { cands.clone() } else { Vec::new() };
        let sel = track_and_select(&mut self.tracker, cands, &self.cfg.scoring);
        self.record_frame(stacks, &all, sel.as_ref().map(|c| c.id), None);
        sel
    }

    fn patch_estimate(&self, frame: &Frame, c: &PatchCandidate) -> Option<PlanarPose> {
        let cloud = frame.sparse_cloud(&c.pixels);
        estimate_patch_pose(c, &frame.camera(), &cloud, self.world.bricks.brick_height()).ok().map(|e| e.pose)
    }

    /// True top-layer patch nearest to a base-frame estimate.
    fn nearest_true_patch(&self, est: &PlanarPose) -> Option<PlanarPose> {
        let mut best: Option<(f64, PlanarPose)> = None;
        for (i, s) in self.world.stacks.iter().enumerate() {
            let spec = self.world.bricks.get(s.color);
            for (layer, slot) in s.top_bricks() {
                let Ok(p) = ground_truth_patch_pose(s, i, layer, slot, spec) else { continue };
                let b = relative_to(&self.world.base, &p);
                let d = (b.x - est.x).hypot(b.y - est.y);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, b));
                }
            }
        }
        best.map(|(_, p)| p)
    }

    fn frame_approach(&mut self, a: &mut Approach, t: f64) -> Flow {
        if t - a.started > self.cfg.timeouts.approach {
            self.emit(MissionEvent::Timeout);
            return Flow::Replace(Activity::Idle);
        }
        let meas: Option<(f64, f64, f64)> = match (a.is_final, a.target) {
            (false, ApproachTarget::Stack(color)) => {
                let frame = self.capture();
                let stacks = detect_stacks(&frame.labels, &frame.k, color, &self.cfg.detect);
                self.record_frame(stacks.len(), &[], None, None);
                stacks
                    .iter()
                    .max_by(|a, b| a.area.total_cmp(&b.area))
                    .and_then(|s| frame.median_range(&s.pixels).map(|d| (s.position.x, s.position.y, d)))
            }
            (false, ApproachTarget::Footprint) => {
                let frame = self.capture();
                self.record_frame(0, &[], None, None);
                detect_footprint(&frame.labels, &frame.k)
                    .ok()
                    .and_then(|(p, c, r)| frame.point(c, r).map(|q| (p.x, p.y, q.x.hypot(q.y))))
            }
            (true, ApproachTarget::Stack(color)) => {
                let frame = self.capture();
                let (_, sel) = self.track_patch(&frame, color);
                sel.and_then(|c| {
                    let est = self.patch_estimate(&frame, &c)?;
                    a.last_patch = Some(est);
                    Some((c.position.x, c.position.y, est.x.hypot(est.y)))
                })
            }
            (true, ApproachTarget::Footprint) => a.cell.map(|cell| {
                let b = relative_to(&self.estimated_pose(), &cell);
                (-self.cfg.intrinsics.focal_px * b.y.atan2(b.x).tan(), 0.0, b.x.hypot(b.y))
            }),
        };
        let dtc = self.cfg.camera_period;
        let Some((x, y, d)) = meas else {
            a.misses += 1;
            a.cmd = (0.0, 0.0);
            self.pending_delta = EffectorDelta::default();
            if a.updates > 0 {
                filter_step(&mut a.filter, dtc, None);
            }
            if a.misses > 10 {
                if a.is_final {
                    self.emit(MissionEvent::PatchLost);
                    return Flow::Replace(Activity::Idle);
                }
                a.seen = false;
            } else if !a.announced && !a.is_final {
                // nothing seen yet: start searching immediately
                a.seen = false;
            }
            return Flow::Continue;
        };
        a.misses = 0;
        a.seen = true;
        if !a.announced && !a.is_final {
            a.announced = true;
            self.emit(MissionEvent::ObjectDetected);
        }
        let d_hat = filter_step(&mut a.filter, dtc, Some(d));
        a.updates += 1;
        let g = ApproachGains { d_r: a.d_r, ..self.cfg.approach };
        let cmd = approach_command(x, y, d_hat, &g);
        a.cmd = (cmd.v, cmd.omega);
        self.pending_delta = EffectorDelta { dpitch: cmd.dpitch, ..Default::default() };
        self.log.control.push(ControlRow {
            t,
            stage: if a.is_final { "final_approach" } else { "initial_approach" }.into(),
            err_x: x,
            err_y: y,
            err_psi: 0.0,
            err_d: d_hat - a.d_r,
            cmd: [cmd.v, cmd.omega, cmd.dpitch, 0.0, 0.0],
        });
        let converged = a.updates >= 3 && (d_hat - a.d_r).abs() < self.cfg.approach_tol_d && x.abs() < self.cfg.approach_tol_px;
        if !converged {
            return Flow::Continue;
        }
        self.pending_delta = EffectorDelta::default();
        if !a.is_final {
            self.emit(MissionEvent::GoalReached);
            return Flow::Replace(Activity::Idle);
        }
        let reach = self.cfg.effector.reach;
        let ok = match (a.target, a.cell) {
            (ApproachTarget::Stack(_), _) => {
                let est = a.last_patch.expect("measured this frame");
                if let Some(truth) = self.nearest_true_patch(&est) {
                    self.log.perpendicularity_deg.push(perpendicularity_error(&truth).to_degrees());
                }
                check_reachability(&est, &reach)
            }
            (ApproachTarget::Footprint, Some(cell)) => check_reachability(&relative_to(&self.estimated_pose(), &cell), &reach),
            (ApproachTarget::Footprint, None) => false,
        };
        if ok {
            self.emit(MissionEvent::WithinReach);
        } else {
            self.emit(match a.target {
                ApproachTarget::Stack(_) => MissionEvent::PickupFailed,
                ApproachTarget::Footprint => MissionEvent::Timeout,
            });
        }
        Flow::Replace(Activity::Idle)
    }

    fn frame_detect(&mut self, d: &mut Detect, t: f64) -> Flow {
        let lost = match d.target {
            ApproachTarget::Stack(_) => MissionEvent::PatchLost,
            ApproachTarget::Footprint => MissionEvent::Timeout,
        };
        if t - d.started > self.cfg.timeouts.detection {
            self.emit(lost);
            return Flow::Replace(Activity::Idle);
        }
        let frame = self.capture();
        let est = match d.target {
            ApproachTarget::Stack(color) => {
                let (_, sel) = self.track_patch(&frame, color);
                sel.and_then(|c| self.patch_estimate(&frame, &c))
            }
            ApproachTarget::Footprint => estimate_footprint_pose(&frame.labels, &frame.camera()).ok().map(|f| f.corner),
        };
        let Some(est) = est else {
            d.misses += 1;
            if d.misses > 10 {
                self.emit(lost);
                return Flow::Replace(Activity::Idle);
            }
            return Flow::Continue;
        };
        if let Some(f) = self.log.frames.last_mut() {
            f.estimated_pose = Some(est);
        }
        d.estimates.push(est);
        if d.estimates.len() < self.cfg.detection_frames {
            return Flow::Continue;
        }
        let footprint = d.target == ApproachTarget::Footprint;
        let mean = mean_pose(&d.estimates, !footprint);
        let robot = self.estimated_pose();
        let truth = if footprint { Some(relative_to(&self.world.base, &self.world.footprint.corner)) } else { self.nearest_true_patch(&mean) };
        if let Some(truth) = truth {
            let yaw_err = if footprint { normalize_angle(mean.yaw - truth.yaw) } else { axis_angle_diff(mean.yaw, truth.yaw) };
            self.log.detections.push(DetectionRecord {
                t,
                footprint,
                estimate: mean,
                truth,
                distance: truth.x.hypot(truth.y),
                distance_error: (mean.x - truth.x).hypot(mean.y - truth.y),
                orientation_deg: truth.yaw.to_degrees(),
                orientation_error_deg: yaw_err.to_degrees(),
            });
        }
        let pose = if footprint {
            from_base(&robot, &mean)
        } else {
            let t = FrameTransform::from_pose(&robot, FrameId::Base, FrameId::Map);
            match to_map_frame(&mean, &t) {
                Ok(p) => p.to_rigid(),
                Err(_) => {
                    self.emit(lost);
                    return Flow::Replace(Activity::Idle);
                }
            }
        };
        self.emit(MissionEvent::PoseEstimated { pose, robot });
        Flow::Replace(Activity::Idle)
    }

    fn servo_context(&self) -> ServoContext {
        let cam = self.world.camera.camera_in_base(&self.world.effector).translation.vector;
        let e = self.world.effector;
        ServoContext {
            effector: e,
            camera_z: cam.z,
            camera_offset: Vector2::new(cam.x - e.x, cam.y - e.y),
            contact: contact_triggered(&self.world),
        }
    }

    fn frame_servo(&mut self, s: &mut Servo, t: f64) -> Flow {
        if t - s.started > self.cfg.timeouts.servo {
            let ev = match s.kind {
                ServoKind::Pickup { .. } => MissionEvent::PickupFailed,
                ServoKind::Drop { .. } => MissionEvent::Timeout,
            };
            return Flow::Replace(self.abort_servo(s.kind, ev));
        }
        let ctx = self.servo_context();
        let visual = matches!(s.sup.stage, ServoStage::XPitch | ServoStage::YServo | ServoStage::YawServo);
        let obs = if !visual {
            None
        } else {
            match s.kind {
                ServoKind::Pickup { .. } => {
                    let color = self.mission.current.map(|c| c.color).unwrap_or(BrickColor::Red);
                    let frame = self.capture();
                    let (_, sel) = self.track_patch(&frame, color);
                    sel.map(|c| {
                        let center = rect_center(&c);
                        ServoObservation { x_p: center.x, y_p: center.y, psi_p: c.rect.angle, depth: frame.point_at(center).map(|p| frame.cam_base.inverse_transform_point(&p).z) }
                    })
                }
                ServoKind::Drop { target, .. } => {
                    let cam_map: Isometry3<f64> = self.estimated_pose().to_isometry() * self.world.camera.camera_in_base(&self.world.effector);
                    project_target(&target, &cam_map, &self.cfg.intrinsics).map(|(p, psi, depth)| ServoObservation { x_p: p.x, y_p: p.y, psi_p: psi, depth: Some(depth) })
                }
            }
        };
        let stage = s.sup.stage;
        match s.sup.step(obs, &ctx) {
            Ok(mut d) => {
                if s.sup.stage == ServoStage::ZApproach && stage == ServoStage::ZApproach && !ctx.contact && d.dz.abs() < 0.002 {
                    // creep down when the snapped goal sits above the real surface
                    d.dz = -0.005;
                }
                self.pending_delta = d;
                let o = obs.unwrap_or(ServoObservation { x_p: 0.0, y_p: 0.0, psi_p: 0.0, depth: None });
                self.log.control.push(ControlRow {
                    t,
                    stage: format!("{stage:?}"),
                    err_x: o.x_p,
                    err_y: o.y_p,
                    err_psi: o.psi_p,
                    err_d: s.sup.goal_z().map(|g| ctx.effector.z - g).unwrap_or(0.0),
                    cmd: [d.dx, d.dy, d.dz, d.dpitch, d.dyaw],
                });
                Flow::Continue
            }
            Err(ControlError::PatchLost(_)) => Flow::Replace(self.abort_servo(s.kind, MissionEvent::PatchLost)),
            Err(ControlError::OutOfEnvelope) => {
                let ev = match s.kind {
                    ServoKind::Pickup { .. } => MissionEvent::PickupFailed,
                    ServoKind::Drop { .. } => MissionEvent::Timeout,
                };
                Flow::Replace(self.abort_servo(s.kind, ev))
            }
        }
    }

    fn check_contact(&mut self, s: &mut Servo) -> Flow {
        if s.sup.stage != ServoStage::ZApproach || !contact_triggered(&self.world) {
            return Flow::Continue;
        }
        let ctx = self.servo_context();
        if s.sup.step(None, &ctx).is_err() || s.sup.stage != ServoStage::Done {
            return Flow::Continue;
        }
        self.pending_delta = EffectorDelta::default();
        let half = self.cfg.basket_op_time / 2.0;
        let lift = self.lift_pose();
        match s.kind {
            ServoKind::Pickup { slot } => {
                self.world.magnet_on = true;
                match attach_brick(&mut self.world) {
                    Ok(_) => {
                        self.log.pickups += 1;
                        let steps = vec![Step::Move(lift, 1.0), Step::Move(self.cfg.slot_pose(slot), half), Step::StoreInSlot(slot), Step::Move(self.cfg.observe_pose, half)];
                        Flow::Replace(self.script(steps, MissionEvent::PickupDone))
                    }
                    Err(_) => {
                        self.log.pickup_failures += 1;
                        self.world.magnet_on = false;
                        let steps = vec![Step::Move(lift, 1.0), Step::Move(self.cfg.observe_pose, half)];
                        Flow::Replace(self.script(steps, MissionEvent::PickupFailed))
                    }
                }
            }
            ServoKind::Drop { .. } => match place_brick(&mut self.world) {
                Ok(rec) => {
                    self.log.placements.push(rec);
                    let steps = vec![Step::Move(lift, 1.0), Step::Move(self.cfg.observe_pose, half)];
                    Flow::Replace(self.script(steps, MissionEvent::DropDone))
                }
                Err(_) => Flow::Replace(self.abort_servo(s.kind, MissionEvent::Timeout)),
            },
        }
    }
}
