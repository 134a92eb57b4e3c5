//! Velocity limits, plans as timed (v, omega) segments, and command gating.

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, RigidPose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityLimits {
    pub v_min: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub r_min: f64,
}

impl Default for VelocityLimits {
    fn default() -> Self {
        Self { v_min: -0.3, v_max: 1.0, omega_max: 1.0, r_min: 0.5 }
    }
}

/// Scales `(v, omega)` into the limits by a single factor so the turning
/// radius `v / omega` is kept.
pub fn clamp_velocity(v: f64, omega: f64, lim: &VelocityLimits) -> (f64, f64) {
    let mut s = 1.0;
    let mut bind_v = None;
    let mut bind_w = None;
    if v > lim.v_max {
        s = lim.v_max / v;
        bind_v = Some(lim.v_max);
    } else if v < lim.v_min {
        s = lim.v_min / v;
        bind_v = Some(lim.v_min);
    }
    if omega.abs() > lim.omega_max {
        let sw = lim.omega_max / omega.abs();
        if sw < s {
            s = sw;
            bind_v = None;
            bind_w = Some(lim.omega_max.copysign(omega));
        }
    }
    if s == 1.0 {
        return (v, omega);
    }
    let v2 = bind_v.unwrap_or(v * s).clamp(lim.v_min.min(0.0), lim.v_max.max(0.0));
    let w2 = bind_w.unwrap_or(omega * s).clamp(-lim.omega_max, lim.omega_max);
    (v2, w2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub v: f64,
    pub omega: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPlan {
    pub segments: Vec<Segment>,
    pub goal: RigidPose,
}

impl MotionPlan {
    pub fn new(segments: Vec<Segment>, goal: RigidPose) -> Self {
        Self { segments, goal }
    }

    /// Sign changes of the forward velocity along the plan.
    pub fn switch_count(&self) -> usize {
        let signs: Vec<bool> = self.segments.iter().filter(|s| s.v != 0.0 && s.duration > 0.0).map(|s| s.v > 0.0).collect();
        signs.windows(2).filter(|w| w[0] != w[1]).count()
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn is_finished(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn head(&self) -> Option<(f64, f64)> {
        self.segments.first().map(|s| (s.v, s.omega))
    }

    /// Consumes `dt` seconds of the plan.
    pub fn advance(&mut self, mut dt: f64) {
        while dt > 0.0 {
            let Some(first) = self.segments.first_mut() else { return };
            if first.duration > dt + 1e-12 {
                first.duration -= dt;
                return;
            }
            dt -= first.duration;
            self.segments.remove(0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateState {
    pub max_switches: usize,
    /// Time spent suppressing commands.
    pub elapsed: f64,
    pub timeout: f64,
}

impl Default for GateState {
    fn default() -> Self {
        Self { max_switches: 2, elapsed: 0.0, timeout: 5.0 }
    }
}

/// Holds the robot still while the plan has too many direction switches,
/// until a better plan arrives or the timeout releases it.
pub fn gate_plan(plan: &MotionPlan, gate: &mut GateState, dt: f64) -> (f64, f64) {
    let too_many = plan.switch_count() > gate.max_switches;
    // tolerance absorbs the rounding of accumulated dt steps
    if too_many && gate.elapsed < gate.timeout - 1e-9 {
        gate.elapsed += dt;
        return (0.0, 0.0);
    }
    if !too_many {
        gate.elapsed = 0.0;
    }
    plan.head().unwrap_or((0.0, 0.0))
}

pub fn goal_reached(pose: &RigidPose, goal: &RigidPose, xy_tol: f64, yaw_tol: f64) -> bool {
    pose.planar_distance(goal) <= xy_tol && normalize_angle(pose.yaw - goal.yaw).abs() <= yaw_tol
}
