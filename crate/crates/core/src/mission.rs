//! Hierarchical mission state machine, task sequencing under basket capacity,
//! alignment goals and wall cell targets.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RigidPose;
use crate::world::{BrickCatalog, BrickColor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MissionError {
    #[error("brick {color} needs {cost} slots but the basket holds {capacity}")]
    InfeasibleBrick { color: BrickColor, cost: u32, capacity: u32 },
    #[error("event {event} is not legal in {state}")]
    InvalidEvent { state: String, event: String },
    #[error("wall pose has not been detected yet")]
    MissingWallPose,
    #[error("basket is full")]
    BasketFull,
    #[error("no {0} brick in the basket")]
    BrickUnavailable(BrickColor),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Load,
    Build,
}

/// Row (bottom-up) and index within the row, counted from the corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WallCell {
    pub row: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrickTask {
    pub kind: TaskKind,
    pub color: BrickColor,
    pub cell: WallCell,
}

impl fmt::Display for BrickTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            TaskKind::Load => 'L',
            TaskKind::Build => 'B',
        };
        write!(f, "{k}_{}@{}.{}", self.color.code(), self.cell.row, self.cell.index)
    }
}

/// Wall order is bottom row first, each row from the corner outward.
/// Loads are batched greedily until the next brick no longer fits, then the
/// batch's builds follow in wall order.
pub fn plan_sequence(
    blueprint: &[Vec<BrickColor>],
    cost: impl Fn(BrickColor) -> u32,
    capacity: u32,
) -> Result<Vec<BrickTask>, MissionError> {
    let mut out = Vec::new();
    let mut batch: Vec<(BrickColor, WallCell)> = Vec::new();
    let mut remaining = capacity;
    let flush = |batch: &mut Vec<(BrickColor, WallCell)>, out: &mut Vec<BrickTask>| {
        out.extend(batch.iter().map(|&(color, cell)| BrickTask { kind: TaskKind::Load, color, cell }));
        out.extend(batch.iter().map(|&(color, cell)| BrickTask { kind: TaskKind::Build, color, cell }));
        batch.clear();
    };
    for (row, colors) in blueprint.iter().enumerate() {
        for (index, &color) in colors.iter().enumerate() {
            let c = cost(color);
            if c > capacity {
                return Err(MissionError::InfeasibleBrick { color, cost: c, capacity });
            }
            if c > remaining {
                flush(&mut batch, &mut out);
                remaining = capacity;
            }
            remaining -= c;
            batch.push((color, WallCell { row, index }));
        }
    }
    flush(&mut batch, &mut out);
    Ok(out)
}

/// What the robot remembers about its basket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basket {
    pub capacity: u32,
    /// (slot, color, cost, insertion order)
    pub entries: Vec<(usize, BrickColor, u32, u64)>,
    counter: u64,
}

impl Basket {
    pub fn new(capacity: u32) -> Self {
        Self { capacity, entries: Vec::new(), counter: 0 }
    }

    pub fn used(&self) -> u32 {
        self.entries.iter().map(|e| e.2).sum()
    }

    /// Slot a brick of this cost would be stored in.
    pub fn free_slot(&self, cost: u32) -> Result<usize, MissionError> {
        if self.used() + cost > self.capacity {
            return Err(MissionError::BasketFull);
        }
        Ok((0..).find(|s| self.entries.iter().all(|e| e.0 != *s)).expect("unbounded range"))
    }

    pub fn store(&mut self, color: BrickColor, cost: u32) -> Result<usize, MissionError> {
        let slot = self.free_slot(cost)?;
        self.counter += 1;
        self.entries.push((slot, color, cost, self.counter));
        Ok(slot)
    }

    /// Most recently stored slot holding `color`.
    pub fn next_for(&self, color: BrickColor) -> Result<usize, MissionError> {
        self.entries
            .iter()
            .filter(|e| e.1 == color)
            .max_by_key(|e| e.3)
            .map(|e| e.0)
            .ok_or(MissionError::BrickUnavailable(color))
    }

    pub fn take(&mut self, slot: usize) -> Option<BrickColor> {
        let i = self.entries.iter().position(|e| e.0 == slot)?;
        Some(self.entries.remove(i).1)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Goal at `standoff` from the object along its minor axis, on the side of
/// `robot`, facing the object.
pub fn alignment_goal(object: &RigidPose, standoff: f64, robot: Vector2<f64>) -> RigidPose {
    let mut n = Vector2::new(-object.yaw.sin(), object.yaw.cos());
    let c = Vector2::new(object.x, object.y);
    if (robot - c).dot(&n) > 0.0 {
        n = -n;
    }
    // n points from the goal toward the object.
    let g = c - n * standoff;
    RigidPose::planar(g.x, g.y, n.y.atan2(n.x))
}

/// Cell center on the wall in the map frame; `z` is the supporting height.
pub fn drop_target(
    blueprint: &[Vec<BrickColor>],
    cell: WallCell,
    wall: Option<&RigidPose>,
    width: f64,
    catalog: &BrickCatalog,
) -> Result<RigidPose, MissionError> {
    let wall = wall.ok_or(MissionError::MissingWallPose)?;
    let row = &blueprint[cell.row];
    let along: f64 = row[..cell.index].iter().map(|&c| catalog.get(c).length).sum::<f64>() + catalog.get(row[cell.index]).length / 2.0;
    let a = Vector2::new(wall.yaw.cos(), wall.yaw.sin());
    let out = Vector2::new(-a.y, a.x);
    let p = Vector2::new(wall.x, wall.y) + a * along - out * (width / 2.0);
    Ok(RigidPose::new(p.x, p.y, cell.row as f64 * catalog.brick_height(), 0.0, 0.0, wall.yaw))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopState {
    GoToStacks,
    LoadBricks,
    GoToWall,
    UnloadBricks,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubState {
    InitialApproach,
    PoseDetection,
    Alignment,
    FinalApproach,
    BrickPickup,
    BrickDrop,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum MissionEvent {
    GoalReached,
    ObjectDetected,
    PoseEstimated { pose: RigidPose, robot: RigidPose },
    AlignmentReached,
    WithinReach,
    PickupDone,
    PickupFailed,
    DropDone,
    BasketFull,
    BasketEmpty,
    TaskQueueEmpty,
    PatchLost,
    Timeout,
}

impl MissionEvent {
    pub fn name(&self) -> &'static str {
        match self {
            MissionEvent::GoalReached => "GoalReached",
            MissionEvent::ObjectDetected => "ObjectDetected",
            MissionEvent::PoseEstimated { .. } => "PoseEstimated",
            MissionEvent::AlignmentReached => "AlignmentReached",
            MissionEvent::WithinReach => "WithinReach",
            MissionEvent::PickupDone => "PickupDone",
            MissionEvent::PickupFailed => "PickupFailed",
            MissionEvent::DropDone => "DropDone",
            MissionEvent::BasketFull => "BasketFull",
            MissionEvent::BasketEmpty => "BasketEmpty",
            MissionEvent::TaskQueueEmpty => "TaskQueueEmpty",
            MissionEvent::PatchLost => "PatchLost",
            MissionEvent::Timeout => "Timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ApproachTarget {
    Stack(BrickColor),
    Footprint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MissionAction {
    NavigateToStacks(BrickColor),
    NavigateToWall,
    InitialApproach(ApproachTarget),
    DetectPose(ApproachTarget),
    Navigate(RigidPose),
    FinalApproach { target: ApproachTarget, cell: Option<RigidPose> },
    Pickup { color: BrickColor, slot: usize },
    Drop { color: BrickColor, slot: usize, target: RigidPose },
    MemorizeWall(RigidPose),
    Skipped(BrickTask),
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissionConfig {
    pub retry_max: u32,
    pub d_align: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self { retry_max: 2, d_align: 1.2 }
    }
}

/// One row of the mission trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub state: TopState,
    pub sub_state: SubState,
    pub event: String,
    pub task: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Mission {
    pub cfg: MissionConfig,
    pub top: TopState,
    pub sub: SubState,
    pub queue: VecDeque<BrickTask>,
    pub current: Option<BrickTask>,
    pub basket: Basket,
    pub wall_pose: Option<RigidPose>,
    pub wall_writes: u32,
    pub blueprint: Vec<Vec<BrickColor>>,
    pub wall_width: f64,
    pub catalog: BrickCatalog,
    pub retries: u32,
    pub skipped: Vec<BrickTask>,
    pub completed: Vec<BrickTask>,
}

impl Mission {
    pub fn new(
        cfg: MissionConfig,
        tasks: Vec<BrickTask>,
        basket: Basket,
        blueprint: Vec<Vec<BrickColor>>,
        wall_width: f64,
        catalog: BrickCatalog,
    ) -> Self {
        Self {
            cfg,
            top: TopState::GoToStacks,
            sub: SubState::Idle,
            queue: tasks.into(),
            current: None,
            basket,
            wall_pose: None,
            wall_writes: 0,
            blueprint,
            wall_width,
            catalog,
            retries: 0,
            skipped: Vec::new(),
            completed: Vec::new(),
        }
    }

    /// Actions that start the first task.
    pub fn start(&mut self) -> Vec<MissionAction> {
        let mut acts = Vec::new();
        self.next_task(&mut acts);
        acts
    }

    pub fn is_done(&self) -> bool {
        self.top == TopState::Done
    }

    fn invalid(&self, e: &MissionEvent) -> MissionError {
        MissionError::InvalidEvent { state: format!("{:?}/{:?}", self.top, self.sub), event: e.name().to_string() }
    }

    fn task(&self) -> BrickTask {
        self.current.expect("active state without a task")
    }

    pub fn cell_target(&self, cell: WallCell) -> Result<RigidPose, MissionError> {
        drop_target(&self.blueprint, cell, self.wall_pose.as_ref(), self.wall_width, &self.catalog)
    }

    /// Approach goal for a wall cell, on the footprint's outward side.
    pub fn cell_goal(&self, cell: WallCell) -> Result<RigidPose, MissionError> {
        let t = self.cell_target(cell)?;
        let out = Vector2::new(-t.yaw.sin(), t.yaw.cos());
        Ok(alignment_goal(&t, self.cfg.d_align, Vector2::new(t.x, t.y) + out))
    }

    fn pickup_action(&self) -> Result<MissionAction, MissionError> {
        let t = self.task();
        let slot = self.basket.free_slot(self.catalog.get(t.color).slot_cost)?;
        Ok(MissionAction::Pickup { color: t.color, slot })
    }

    fn next_task(&mut self, acts: &mut Vec<MissionAction>) {
        self.retries = 0;
        let prev_top = self.top;
        let prev = self.current.take();
        let Some(t) = self.queue.pop_front() else {
            self.top = TopState::Done;
            self.sub = SubState::Idle;
            acts.push(MissionAction::Finished);
            return;
        };
        self.current = Some(t);
        match t.kind {
            TaskKind::Load => {
                let same_stack = prev_top == TopState::LoadBricks && prev.is_some_and(|p| p.kind == TaskKind::Load && p.color == t.color);
                if same_stack {
                    self.sub = SubState::InitialApproach;
                    acts.push(MissionAction::InitialApproach(ApproachTarget::Stack(t.color)));
                } else {
                    self.top = TopState::GoToStacks;
                    self.sub = SubState::Idle;
                    acts.push(MissionAction::NavigateToStacks(t.color));
                }
            }
            TaskKind::Build => {
                if prev_top == TopState::UnloadBricks && self.wall_pose.is_some() {
                    self.enter_cell_alignment(acts);
                } else {
                    self.top = TopState::GoToWall;
                    self.sub = SubState::Idle;
                    acts.push(MissionAction::NavigateToWall);
                }
            }
        }
    }

    fn enter_cell_alignment(&mut self, acts: &mut Vec<MissionAction>) {
        let cell = self.task().cell;
        self.top = TopState::UnloadBricks;
        self.sub = SubState::Alignment;
        let goal = self.cell_goal(cell).expect("wall pose present");
        acts.push(MissionAction::Navigate(goal));
    }

    fn skip_current(&mut self, acts: &mut Vec<MissionAction>) {
        let t = self.task();
        self.skipped.push(t);
        acts.push(MissionAction::Skipped(t));
        if t.kind == TaskKind::Load {
            if let Some(i) = self.queue.iter().position(|b| b.kind == TaskKind::Build && b.cell == t.cell) {
                let b = self.queue.remove(i).expect("index in range");
                self.skipped.push(b);
                acts.push(MissionAction::Skipped(b));
            }
        }
        self.next_task(acts);
    }

    fn fail(&mut self, acts: &mut Vec<MissionAction>) {
        self.retries += 1;
        if self.retries > self.cfg.retry_max {
            self.skip_current(acts);
            return;
        }
        let t = self.task();
        match self.top {
            TopState::GoToStacks => acts.push(MissionAction::NavigateToStacks(t.color)),
            TopState::GoToWall => acts.push(MissionAction::NavigateToWall),
            TopState::LoadBricks => {
                self.sub = SubState::InitialApproach;
                acts.push(MissionAction::InitialApproach(ApproachTarget::Stack(t.color)));
            }
            TopState::UnloadBricks => {
                if self.wall_pose.is_some() {
                    self.enter_cell_alignment(acts);
                } else {
                    self.sub = SubState::InitialApproach;
                    acts.push(MissionAction::InitialApproach(ApproachTarget::Footprint));
                }
            }
            TopState::Done => {}
        }
    }

    pub fn step(&mut self, event: &MissionEvent) -> Result<Vec<MissionAction>, MissionError> {
        use MissionEvent as E;
        use SubState as S;
        use TopState as T;
        let mut acts = Vec::new();
        if self.top == T::Done {
            return Err(self.invalid(event));
        }
        match (self.top, self.sub, event) {
            (_, _, E::TaskQueueEmpty) => {
                self.queue.clear();
                self.top = T::Done;
                self.sub = S::Idle;
                self.current = None;
                acts.push(MissionAction::Finished);
            }
            (_, _, E::Timeout | E::PatchLost | E::PickupFailed) => self.fail(&mut acts),
            (T::GoToStacks, S::Idle, E::GoalReached) => {
                self.top = T::LoadBricks;
                self.sub = S::InitialApproach;
                acts.push(MissionAction::InitialApproach(ApproachTarget::Stack(self.task().color)));
            }
            (T::LoadBricks | T::UnloadBricks, S::InitialApproach | S::PoseDetection, E::ObjectDetected) => {}
            (T::LoadBricks, S::InitialApproach, E::GoalReached) => {
                self.sub = S::PoseDetection;
                acts.push(MissionAction::DetectPose(ApproachTarget::Stack(self.task().color)));
            }
            (T::LoadBricks, S::PoseDetection, E::PoseEstimated { pose, robot }) => {
                self.sub = S::Alignment;
                acts.push(MissionAction::Navigate(alignment_goal(pose, self.cfg.d_align, Vector2::new(robot.x, robot.y))));
            }
            (T::LoadBricks, S::Alignment, E::AlignmentReached) => {
                self.sub = S::FinalApproach;
                acts.push(MissionAction::FinalApproach { target: ApproachTarget::Stack(self.task().color), cell: None });
            }
            (T::LoadBricks, S::FinalApproach, E::WithinReach) => match self.pickup_action() {
                Ok(a) => {
                    self.sub = S::BrickPickup;
                    acts.push(a);
                }
                Err(_) => {
                    self.skip_current(&mut acts);
                }
            },
            (T::LoadBricks, S::BrickPickup, E::PickupDone) => {
                let t = self.task();
                self.basket.store(t.color, self.catalog.get(t.color).slot_cost)?;
                self.completed.push(t);
                self.next_task(&mut acts);
            }
            (T::LoadBricks, _, E::BasketFull) => {
                // Whatever is loaded gets built; the rest of this load is dropped.
                self.skip_current(&mut acts);
            }
            (T::GoToWall, S::Idle, E::GoalReached) => {
                self.top = T::UnloadBricks;
                if self.wall_pose.is_some() {
                    self.enter_cell_alignment(&mut acts);
                } else {
                    self.sub = S::InitialApproach;
                    acts.push(MissionAction::InitialApproach(ApproachTarget::Footprint));
                }
            }
            (T::UnloadBricks, S::InitialApproach, E::GoalReached) => {
                self.sub = S::PoseDetection;
                acts.push(MissionAction::DetectPose(ApproachTarget::Footprint));
            }
            (T::UnloadBricks, S::PoseDetection, E::PoseEstimated { pose, .. }) => {
                if self.wall_pose.is_none() {
                    self.wall_pose = Some(*pose);
                    self.wall_writes += 1;
                    acts.push(MissionAction::MemorizeWall(*pose));
                }
                self.enter_cell_alignment(&mut acts);
            }
            (T::UnloadBricks, S::Alignment, E::AlignmentReached) => {
                let cell = self.cell_target(self.task().cell)?;
                self.sub = S::FinalApproach;
                acts.push(MissionAction::FinalApproach { target: ApproachTarget::Footprint, cell: Some(cell) });
            }
            (T::UnloadBricks, S::FinalApproach, E::WithinReach) => {
                let t = self.task();
                match self.basket.next_for(t.color) {
                    Ok(slot) => {
                        self.sub = S::BrickDrop;
                        acts.push(MissionAction::Drop { color: t.color, slot, target: self.cell_target(t.cell)? });
                    }
                    Err(_) => self.skip_current(&mut acts),
                }
            }
            (T::UnloadBricks, S::BrickDrop, E::DropDone) => {
                let t = self.task();
                let slot = self.basket.next_for(t.color)?;
                self.basket.take(slot);
                self.completed.push(t);
                self.next_task(&mut acts);
            }
            (T::UnloadBricks, _, E::BasketEmpty) => self.skip_current(&mut acts),
            _ => return Err(self.invalid(event)),
        }
        Ok(acts)
    }

    pub fn record(&self, t: f64, event: &str) -> TraceRecord {
        TraceRecord { t, state: self.top, sub_state: self.sub, event: event.to_string(), task: self.current.map(|t| t.to_string()) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;
    use BrickColor::*;

    fn costs(c: BrickColor) -> u32 {
        BrickCatalog::default().get(c).slot_cost
    }

    fn short(tasks: &[BrickTask]) -> Vec<String> {
        tasks
            .iter()
            .map(|t| format!("{}{}", if t.kind == TaskKind::Load { 'L' } else { 'B' }, t.color.code()))
            .collect()
    }

    #[test]
    fn sequence_examples() {
        assert_eq!(short(&plan_sequence(&[vec![Red, Red]], costs, 4).unwrap()), ["LR", "LR", "BR", "BR"]);
        assert_eq!(short(&plan_sequence(&[vec![Blue, Blue]], costs, 4).unwrap()), ["LB", "BB", "LB", "BB"]);
        assert_eq!(short(&plan_sequence(&[vec![Red, Green, Blue]], costs, 4).unwrap()), ["LR", "LG", "BR", "BG", "LB", "BB"]);
        assert!(matches!(plan_sequence(&[vec![Blue]], costs, 3), Err(MissionError::InfeasibleBrick { .. })));
    }

    /// Batches rebuilt from the task list: every batch fits, every batch is
    /// maximal, and builds follow wall order.
    fn check_sequence(bp: &[Vec<BrickColor>], cap: u32, tasks: &[BrickTask]) {
        let wall: Vec<WallCell> = bp.iter().enumerate().flat_map(|(r, row)| (0..row.len()).map(move |i| WallCell { row: r, index: i })).collect();
        let builds: Vec<WallCell> = tasks.iter().filter(|t| t.kind == TaskKind::Build).map(|t| t.cell).collect();
        assert_eq!(builds, wall);
        let mut i = 0;
        let mut batches = Vec::new();
        while i < tasks.len() {
            let loads: Vec<_> = tasks[i..].iter().take_while(|t| t.kind == TaskKind::Load).copied().collect();
            let n = loads.len();
            let bs: Vec<_> = tasks[i + n..].iter().take(n).copied().collect();
            assert!(bs.iter().all(|b| b.kind == TaskKind::Build));
            assert_eq!(loads.iter().map(|t| t.cell).collect::<Vec<_>>(), bs.iter().map(|t| t.cell).collect::<Vec<_>>());
            assert!(loads.iter().map(|t| costs(t.color)).sum::<u32>() <= cap);
            batches.push(loads);
            i += 2 * n;
        }
        for w in batches.windows(2) {
            let used: u32 = w[0].iter().map(|t| costs(t.color)).sum();
            assert!(used + costs(w[1][0].color) > cap, "batch not maximal");
        }
    }

    proptest! {
        #[test]
        fn sequence_batches(rows in prop::collection::vec(prop::collection::vec(0usize..3, 1..5), 1..4), cap in 4u32..9) {
            let bp: Vec<Vec<BrickColor>> = rows.iter().map(|r| r.iter().map(|&i| [Red, Green, Blue][i]).collect()).collect();
            let tasks = plan_sequence(&bp, costs, cap).unwrap();
            check_sequence(&bp, cap, &tasks);
        }
    }

    #[test]
    fn basket_examples() {
        let mut b = Basket::new(4);
        assert_eq!(b.store(Red, 1).unwrap(), 0);
        assert_eq!(b.next_for(Green), Err(MissionError::BrickUnavailable(Green)));
        b.store(Green, 2).unwrap();
        assert_eq!(b.next_for(Red).unwrap(), 0);
        assert_eq!(b.store(Blue, 4), Err(MissionError::BasketFull));
        b.store(Red, 1).unwrap();
        assert_eq!(b.next_for(Red).unwrap(), 2);
        b.take(0);
        assert_eq!(b.store(Red, 1).unwrap(), 0);
    }

    #[test]
    fn alignment_examples() {
        let patch = RigidPose::planar(5.0, 5.0, 0.0);
        let g = alignment_goal(&patch, 1.2, Vector2::new(5.0, 0.0));
        assert_abs_diff_eq!(g.x, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.y, 3.8, epsilon = 1e-12);
        assert_abs_diff_eq!(g.yaw, FRAC_PI_2, epsilon = 1e-12);
        let g = alignment_goal(&patch, 1.2, Vector2::new(5.0, 9.0));
        assert_abs_diff_eq!(g.y, 6.2, epsilon = 1e-12);
        assert_abs_diff_eq!(g.yaw, -FRAC_PI_2, epsilon = 1e-12);
    }

    fn catalog() -> BrickCatalog {
        BrickCatalog::default()
    }

    #[test]
    fn drop_target_examples() {
        let bp = vec![vec![Red, Red, Green], vec![Red]];
        let wall = RigidPose::planar(1.0, 2.0, 0.0);
        let first = drop_target(&bp, WallCell { row: 0, index: 0 }, Some(&wall), 0.2, &catalog()).unwrap();
        assert_abs_diff_eq!(first.x, 1.15, epsilon = 1e-12);
        assert_abs_diff_eq!(first.y, 1.9, epsilon = 1e-12);
        let second = drop_target(&bp, WallCell { row: 0, index: 1 }, Some(&wall), 0.2, &catalog()).unwrap();
        assert_abs_diff_eq!(second.x - first.x, 0.3, epsilon = 1e-12);
        let up = drop_target(&bp, WallCell { row: 1, index: 0 }, Some(&wall), 0.2, &catalog()).unwrap();
        assert_abs_diff_eq!(up.z, catalog().brick_height(), epsilon = 1e-12);
        assert_eq!(drop_target(&bp, WallCell { row: 0, index: 0 }, None, 0.2, &catalog()), Err(MissionError::MissingWallPose));
    }

    fn mission(bp: Vec<Vec<BrickColor>>, cap: u32) -> Mission {
        let tasks = plan_sequence(&bp, costs, cap).unwrap();
        Mission::new(MissionConfig::default(), tasks, Basket::new(cap), bp, 0.2, catalog())
    }

    fn pose_event() -> MissionEvent {
        MissionEvent::PoseEstimated { pose: RigidPose::planar(5.0, 5.0, 0.0), robot: RigidPose::planar(5.0, 2.0, FRAC_PI_2) }
    }

    /// The event a perfect world answers each action with.
    fn answer(a: &MissionAction) -> Option<MissionEvent> {
        Some(match a {
            MissionAction::NavigateToStacks(_) | MissionAction::NavigateToWall | MissionAction::InitialApproach(_) => MissionEvent::GoalReached,
            MissionAction::DetectPose(_) => pose_event(),
            MissionAction::Navigate(_) => MissionEvent::AlignmentReached,
            MissionAction::FinalApproach { .. } => MissionEvent::WithinReach,
            MissionAction::Pickup { .. } => MissionEvent::PickupDone,
            MissionAction::Drop { .. } => MissionEvent::DropDone,
            _ => return None,
        })
    }

    fn run(m: &mut Mission, mut fail: impl FnMut(&MissionEvent) -> Option<MissionEvent>) -> usize {
        let mut pending: Vec<MissionEvent> = m.start().iter().filter_map(answer).collect();
        let mut steps = 0;
        while let Some(e) = pending.pop() {
            let e = fail(&e).unwrap_or(e);
            if let MissionEvent::WithinReach = e {
                assert_eq!(m.sub, SubState::FinalApproach);
            }
            let acts = m.step(&e).unwrap();
            for a in &acts {
                if let MissionAction::Drop { color, .. } = a {
                    assert!(m.basket.entries.iter().any(|x| x.1 == *color));
                }
            }
            pending.extend(acts.iter().filter_map(answer));
            steps += 1;
            assert!(steps < 10_000);
        }
        steps
    }

    #[test]
    fn pose_detection_leads_to_alignment() {
        let mut m = mission(vec![vec![Red]], 4);
        m.start();
        m.step(&MissionEvent::GoalReached).unwrap();
        m.step(&MissionEvent::GoalReached).unwrap();
        let acts = m.step(&pose_event()).unwrap();
        assert_eq!((m.top, m.sub), (TopState::LoadBricks, SubState::Alignment));
        assert!(matches!(acts[0], MissionAction::Navigate(_)));
    }

    #[test]
    fn full_basket_goes_to_wall() {
        let mut m = mission(vec![vec![Blue, Red]], 4);
        m.start();
        for e in [MissionEvent::GoalReached, MissionEvent::GoalReached, pose_event(), MissionEvent::AlignmentReached, MissionEvent::WithinReach] {
            m.step(&e).unwrap();
        }
        assert_eq!(m.sub, SubState::BrickPickup);
        let acts = m.step(&MissionEvent::PickupDone).unwrap();
        assert_eq!(m.top, TopState::GoToWall);
        assert_eq!(acts, vec![MissionAction::NavigateToWall]);
    }

    #[test]
    fn memorized_wall_skips_detection() {
        let mut m = mission(vec![vec![Red, Red]], 4);
        run(&mut m, |_| None);
        assert!(m.is_done());
        assert_eq!(m.wall_writes, 1);

        let mut m = mission(vec![vec![Red], vec![Red]], 1);
        m.wall_pose = Some(RigidPose::planar(0.0, 0.0, 0.0));
        m.start();
        for e in [MissionEvent::GoalReached, MissionEvent::GoalReached, pose_event(), MissionEvent::AlignmentReached, MissionEvent::WithinReach, MissionEvent::PickupDone] {
            m.step(&e).unwrap();
        }
        m.step(&MissionEvent::GoalReached).unwrap();
        assert_eq!((m.top, m.sub), (TopState::UnloadBricks, SubState::Alignment));
    }

    #[test]
    fn invalid_events_rejected() {
        let mut m = mission(vec![vec![Red]], 4);
        m.start();
        assert!(matches!(m.step(&MissionEvent::DropDone), Err(MissionError::InvalidEvent { .. })));
        assert!(matches!(m.step(&MissionEvent::WithinReach), Err(MissionError::InvalidEvent { .. })));
    }

    #[test]
    fn retries_then_skip() {
        let mut m = mission(vec![vec![Red, Green]], 4);
        let mut fails = 0;
        run(&mut m, |e| {
            if *e == MissionEvent::PickupDone && first_three(&mut fails) {
                Some(MissionEvent::PickupFailed)
            } else {
                None
            }
        });
        assert!(m.is_done());
        assert_eq!(m.skipped.len(), 2);
        assert_eq!(m.completed.len(), 2);
        assert_eq!(fails, 4);
    }

    // Red fails on every attempt and is skipped with its build.
    fn first_three(n: &mut u32) -> bool {
        *n += 1;
        *n <= 3
    }

    #[test]
    fn liveness_over_seeded_scenarios() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = rng.random_range(1..4);
            let bp: Vec<Vec<BrickColor>> = (0..rows)
                .map(|_| (0..rng.random_range(1..5)).map(|_| [Red, Green, Blue][rng.random_range(0..3)]).collect())
                .collect();
            let n: usize = bp.iter().map(|r| r.len()).sum();
            let mut m = mission(bp, 4);
            let fail_p = 0.1;
            let steps = run(&mut m, |_| (rng.random::<f64>() < fail_p).then_some(MissionEvent::PatchLost));
            assert!(m.is_done(), "seed {seed}");
            assert!(steps <= n * 2 * 7 * 3 + 10);
            assert!(m.wall_writes <= 1);
            let order: Vec<_> = m.completed.iter().filter(|t| t.kind == TaskKind::Build).map(|t| t.cell).collect();
            let mut sorted = order.clone();
            sorted.sort_by_key(|c| (c.row, c.index));
            assert_eq!(order, sorted);
        }
    }
}
