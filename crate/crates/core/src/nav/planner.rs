//! Arc-lattice search over (x, y, heading) with analytic curve shots.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::dubins::{self, advance, DubinsPath};
use super::grid::OccupancyGrid;
use super::velocity::{MotionPlan, Segment, VelocityLimits};
use super::NavError;
use crate::geometry::{normalize_angle, RigidPose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub robot_radius: f64,
    /// Arc length of one lattice primitive.
    pub step: f64,
    pub heading_bins: usize,
    pub v_forward: f64,
    pub v_reverse: f64,
    pub reverse_penalty: f64,
    pub switch_penalty: f64,
    pub steer_penalty: f64,
    pub max_expansions: usize,
    pub shot_range: f64,
    pub max_reverse_shot: f64,
    pub xy_tol: f64,
    pub yaw_tol: f64,
    pub collision_step: f64,
    pub heuristic_weight: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            robot_radius: 0.5,
            step: 0.4,
            heading_bins: 72,
            v_forward: 0.6,
            v_reverse: -0.3,
            reverse_penalty: 2.0,
            switch_penalty: 2.0,
            steer_penalty: 0.05,
            max_expansions: 40_000,
            shot_range: 6.0,
            max_reverse_shot: 1.5,
            xy_tol: 0.1,
            yaw_tol: 5f64.to_radians(),
            collision_step: 0.05,
            heuristic_weight: 1.3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    /// Signed arc length, negative when reversing.
    s: f64,
    k: f64,
}

struct Node {
    x: f64,
    y: f64,
    th: f64,
    g: f64,
    parent: Option<usize>,
    piece: Option<Piece>,
}

#[derive(PartialEq)]
struct Open(f64, usize);

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

struct Collision<'a> {
    grid: &'a OccupancyGrid,
    mask: Vec<bool>,
    start: (f64, f64),
    free_radius: f64,
}

impl Collision<'_> {
    fn blocked(&self, x: f64, y: f64) -> bool {
        match self.grid.cell_of(x, y) {
            None => true,
            Some((i, j)) => {
                self.mask[j * self.grid.width + i] && (x - self.start.0).hypot(y - self.start.1) > self.free_radius
            }
        }
    }

    fn piece_free(&self, x: f64, y: f64, th: f64, p: Piece, ds: f64) -> bool {
        let n = (p.s.abs() / ds).ceil().max(1.0) as usize;
        (1..=n).all(|i| {
            let (px, py, _) = advance(x, y, th, p.k, p.s * i as f64 / n as f64);
            !self.blocked(px, py)
        })
    }
}

/// Obstacle-aware distance to the goal over the blocked mask (8-connected).
fn distance_field(grid: &OccupancyGrid, mask: &[bool], goal: (usize, usize)) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; grid.width * grid.height];
    let mut heap = BinaryHeap::new();
    let gi = goal.1 * grid.width + goal.0;
    dist[gi] = 0.0;
    heap.push(Open(0.0, gi));
    let r = grid.resolution;
    while let Some(Open(d, idx)) = heap.pop() {
        if d > dist[idx] {
            continue;
        }
        let (i, j) = ((idx % grid.width) as isize, (idx / grid.width) as isize);
        for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < 0 || nj < 0 || ni as usize >= grid.width || nj as usize >= grid.height {
                continue;
            }
            let n = nj as usize * grid.width + ni as usize;
            if mask[n] {
                continue;
            }
            let nd = d + if di != 0 && dj != 0 { r * std::f64::consts::SQRT_2 } else { r };
            if nd < dist[n] {
                dist[n] = nd;
                heap.push(Open(nd, n));
            }
        }
    }
    dist
}

fn pieces_from_dubins(p: &DubinsPath, reverse: bool) -> Vec<Piece> {
    p.steer
        .iter()
        .zip(&p.lengths)
        .filter(|(_, &l)| l > 1e-9)
        .map(|(st, &l)| {
            let k = st.curvature_sign() / p.radius;
            if reverse {
                Piece { s: -l, k: -k }
            } else {
                Piece { s: l, k }
            }
        })
        .collect()
}

fn to_segments(pieces: &[Piece], cfg: &PlannerConfig, lim: &VelocityLimits) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for p in pieces {
        let base = if p.s >= 0.0 { cfg.v_forward.min(lim.v_max) } else { cfg.v_reverse.max(lim.v_min) };
        let mut v = base;
        if p.k.abs() > 1e-12 {
            v = v.signum() * v.abs().min(lim.omega_max / p.k.abs());
        }
        let seg = Segment { v, omega: v * p.k, duration: p.s.abs() / v.abs() };
        if seg.duration <= 1e-9 {
            continue;
        }
        match out.last_mut() {
            Some(last) if (last.v - seg.v).abs() < 1e-12 && (last.omega - seg.omega).abs() < 1e-12 => {
                last.duration += seg.duration
            }
            _ => out.push(seg),
        }
    }
    out
}

fn shot(col: &Collision, from: (f64, f64, f64), goal: &RigidPose, r: f64, reverse: bool, cfg: &PlannerConfig) -> Option<Vec<Piece>> {
    let flip = if reverse { PI } else { 0.0 };
    let s = RigidPose::planar(from.0, from.1, from.2 + flip);
    let g = RigidPose::planar(goal.x, goal.y, goal.yaw + flip);
    let path = dubins::shortest(&s, &g, r)?;
    if reverse && path.length() > cfg.max_reverse_shot {
        return None;
    }
    let n = (path.length() / cfg.collision_step).ceil() as usize;
    for i in 1..=n {
        let q = path.sample(&s, path.length() * i as f64 / n as f64);
        if col.blocked(q.x, q.y) {
            return None;
        }
    }
    Some(pieces_from_dubins(&path, reverse))
}

/// Plans a curvature-bounded path from `start` to `goal` around inflated
/// obstacles.
pub fn plan_path(
    grid: &OccupancyGrid,
    start: &RigidPose,
    goal: &RigidPose,
    limits: &VelocityLimits,
    cfg: &PlannerConfig,
) -> Result<MotionPlan, NavError> {
    let mask = grid.inflate(cfg.robot_radius);
    let col = Collision { grid, mask, start: (start.x, start.y), free_radius: cfg.robot_radius };
    let Some(goal_cell) = grid.cell_of(goal.x, goal.y) else {
        return Err(NavError::NoPath("goal outside map"));
    };
    if col.mask[goal_cell.1 * grid.width + goal_cell.0] {
        return Err(NavError::NoPath("goal in inflated obstacle"));
    }
    if grid.cell_of(start.x, start.y).is_none() {
        return Err(NavError::NoPath("start outside map"));
    }
    let field = distance_field(grid, &col.mask, goal_cell);
    let r = limits.r_min.max(0.25);
    let curvatures = [-1.0 / r, -0.5 / r, 0.0, 0.5 / r, 1.0 / r];
    let bin = |th: f64| ((th.rem_euclid(TAU) / TAU * cfg.heading_bins as f64).round() as usize) % cfg.heading_bins;
    let key = |x: f64, y: f64, th: f64| grid.cell_of(x, y).map(|(i, j)| (i, j, bin(th)));
    let h = |x: f64, y: f64| {
        let e = (x - goal.x).hypot(y - goal.y);
        let f = grid.cell_of(x, y).map(|(i, j)| field[j * grid.width + i]).unwrap_or(f64::INFINITY);
        cfg.heuristic_weight * e.max(if f.is_finite() { f - grid.resolution } else { e })
    };

    let mut nodes = vec![Node { x: start.x, y: start.y, th: start.yaw, g: 0.0, parent: None, piece: None }];
    let mut best: HashMap<(usize, usize, usize), f64> = HashMap::new();
    let mut open = BinaryHeap::new();
    open.push(Open(h(start.x, start.y), 0));
    let mut expansions = 0usize;

    while let Some(Open(_, idx)) = open.pop() {
        let (x, y, th, g) = (nodes[idx].x, nodes[idx].y, nodes[idx].th, nodes[idx].g);
        if let Some(k) = key(x, y, th) {
            if best.get(&k).is_some_and(|&b| b < g - 1e-9) {
                continue;
            }
        }
        expansions += 1;
        if expansions > cfg.max_expansions {
            return Err(NavError::NoPath("expansion budget exhausted"));
        }
        let dist = (x - goal.x).hypot(y - goal.y);
        if dist <= cfg.xy_tol && normalize_angle(th - goal.yaw).abs() <= cfg.yaw_tol {
            return Ok(finish(&nodes, idx, Vec::new(), goal, cfg, limits));
        }
        if dist <= cfg.shot_range && (dist < 2.0 || expansions % 5 == 1) {
            let tail = shot(&col, (x, y, th), goal, r, false, cfg).or_else(|| shot(&col, (x, y, th), goal, r, true, cfg));
            if let Some(tail) = tail {
                return Ok(finish(&nodes, idx, tail, goal, cfg, limits));
            }
        }
        let last_rev = nodes[idx].piece.map(|p| p.s < 0.0);
        for reverse in [false, true] {
            for &k in &curvatures {
                let p = Piece { s: if reverse { -cfg.step } else { cfg.step }, k };
                if !col.piece_free(x, y, th, p, cfg.collision_step) {
                    continue;
                }
                let (nx, ny, nth) = advance(x, y, th, k, p.s);
                let Some(nk) = key(nx, ny, nth) else { continue };
                let mut cost = cfg.step * if reverse { cfg.reverse_penalty } else { 1.0 } + cfg.steer_penalty * k.abs() * cfg.step;
                if last_rev.is_some_and(|lr| lr != reverse) {
                    cost += cfg.switch_penalty;
                }
                let ng = g + cost;
                if best.get(&nk).is_some_and(|&b| b <= ng) {
                    continue;
                }
                best.insert(nk, ng);
                nodes.push(Node { x: nx, y: ny, th: normalize_angle(nth), g: ng, parent: Some(idx), piece: Some(p) });
                open.push(Open(ng + h(nx, ny), nodes.len() - 1));
            }
        }
    }
    Err(NavError::NoPath("search space exhausted"))
}

fn finish(nodes: &[Node], mut idx: usize, tail: Vec<Piece>, goal: &RigidPose, cfg: &PlannerConfig, lim: &VelocityLimits) -> MotionPlan {
    let mut pieces = Vec::new();
    while let Some(p) = nodes[idx].piece {
        pieces.push(p);
        idx = nodes[idx].parent.expect("piece without parent");
    }
    pieces.reverse();
    pieces.extend(tail);
    MotionPlan::new(to_segments(&pieces, cfg, lim), *goal)
}
