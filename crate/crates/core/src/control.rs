//! Local object approach and the eye-in-hand visual servo for picking up and
//! dropping bricks.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{axis_angle, PlanarPose};
use crate::world::EffectorPose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("magnetic patch lost for {0} consecutive frames")]
    PatchLost(u32),
    #[error("end effector command leaves the reach envelope")]
    OutOfEnvelope,
}

/// Constant-velocity Kalman filter on the distance to an object.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceFilter {
    /// (distance, rate)
    pub x: Vector2<f64>,
    pub p: Matrix2<f64>,
    pub q: f64,
    pub r: f64,
    pub initialized: bool,
}

impl DistanceFilter {
    pub fn new(q: f64, r: f64) -> Self {
        Self { x: Vector2::zeros(), p: Matrix2::identity() * 100.0, q, r, initialized: false }
    }

    pub fn estimate(&self) -> f64 {
        self.x[0]
    }
}

impl Default for DistanceFilter {
    fn default() -> Self {
        Self::new(0.05, 0.01)
    }
}

/// One predict step and, when a measurement is present, one update step.
pub fn filter_step(f: &mut DistanceFilter, dt: f64, z: Option<f64>) -> f64 {
    if !f.initialized {
        if let Some(z) = z {
            f.x = Vector2::new(z, 0.0);
            f.p = Matrix2::new(f.r.max(1e-6), 0.0, 0.0, 1.0);
            f.initialized = true;
        }
        return f.x[0];
    }
    let a = Matrix2::new(1.0, dt, 0.0, 1.0);
    let q = Matrix2::new(dt.powi(3) / 3.0, dt * dt / 2.0, dt * dt / 2.0, dt) * f.q;
    f.x = a * f.x;
    f.p = a * f.p * a.transpose() + q;
    if let Some(z) = z {
        let s = f.p[(0, 0)] + f.r;
        if s > 1e-15 {
            let k = Vector2::new(f.p[(0, 0)] / s, f.p[(1, 0)] / s);
            let y = z - f.x[0];
            f.x += k * y;
            // Joseph form keeps the covariance symmetric positive semidefinite
            let ikh = Matrix2::new(1.0 - k[0], 0.0, -k[1], 1.0);
            f.p = ikh * f.p * ikh.transpose() + Matrix2::new(k[0] * k[0], k[0] * k[1], k[1] * k[0], k[1] * k[1]) * f.r;
        }
    }
    f.p = (f.p + f.p.transpose()) * 0.5;
    f.x[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproachGains {
    pub k_dx: f64,
    pub k_ximg: f64,
    pub k_yimg: f64,
    pub d_r: f64,
}

impl Default for ApproachGains {
    fn default() -> Self {
        Self { k_dx: 0.5, k_ximg: 0.004, k_yimg: 0.002, d_r: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproachCommand {
    pub v: f64,
    pub omega: f64,
    pub dpitch: f64,
}

/// Drive toward the object while keeping it centered in the image.
pub fn approach_command(x_img: f64, y_img: f64, d_hat: f64, g: &ApproachGains) -> ApproachCommand {
    ApproachCommand { v: -g.k_dx * (g.d_r - d_hat), omega: -g.k_ximg * x_img, dpitch: g.k_yimg * y_img }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoGains {
    pub k_theta: f64,
    pub k_yp: f64,
    pub k_xp: f64,
    pub k_psi: f64,
    pub k_dz: f64,
    pub theta_d: f64,
}

impl Default for ServoGains {
    fn default() -> Self {
        Self { k_theta: 0.5, k_yp: 0.001, k_xp: 0.002, k_psi: 0.5, k_dz: 0.25, theta_d: FRAC_PI_2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoTolerances {
    pub eps_x: f64,
    pub eps_y: f64,
    pub eps_psi: f64,
    pub eps_theta: f64,
}

impl Default for ServoTolerances {
    fn default() -> Self {
        Self { eps_x: 5.0, eps_y: 5.0, eps_psi: 2f64.to_radians(), eps_theta: 0.5f64.to_radians() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ServoStage {
    XPitch,
    YServo,
    YawServo,
    ZApproach,
    Done,
}

/// Pitch toward nadir while centering the patch vertically in the image.
pub fn servo_x_pitch(theta: f64, y_p: f64, g: &ServoGains, tol: &ServoTolerances) -> (f64, f64, bool) {
    let e = g.theta_d - theta;
    let done = e.abs() <= tol.eps_theta && y_p.abs() <= tol.eps_y;
    (g.k_theta * e, -g.k_yp * y_p, done)
}

/// Lateral centering and yaw alignment of the gripper with the patch axis.
pub fn servo_y_yaw(x_p: f64, psi_p: f64, g: &ServoGains, tol: &ServoTolerances) -> (f64, f64, bool) {
    let done = x_p.abs() <= tol.eps_x && psi_p.abs() <= tol.eps_psi;
    (-g.k_xp * x_p, -g.k_psi * psi_p, done)
}

/// Nearest positive multiple of the brick height.
pub fn z_snap(d_meas: f64, h_b: f64) -> f64 {
    let n = (d_meas / h_b).round().max(1.0);
    n * h_b
}

/// Downward step toward the snapped surface; `None` once contact is made.
pub fn z_approach(d_z: f64, contact: bool, g: &ServoGains) -> Option<f64> {
    if contact {
        None
    } else {
        Some(g.k_dz * d_z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmReach {
    pub r_min: f64,
    pub r_max: f64,
    /// Largest tolerated deviation from a perpendicular approach.
    pub yaw_tolerance: f64,
}

impl Default for ArmReach {
    fn default() -> Self {
        Self { r_min: 0.3, r_max: 1.46, yaw_tolerance: 26f64.to_radians() }
    }
}

/// Deviation from approaching the patch perpendicular to its long axis.
pub fn perpendicularity_error(patch_in_base: &PlanarPose) -> f64 {
    FRAC_PI_2 - axis_angle(patch_in_base.yaw).abs()
}

pub fn check_reachability(patch_in_base: &PlanarPose, reach: &ArmReach) -> bool {
    let r = patch_in_base.x.hypot(patch_in_base.y);
    r >= reach.r_min && r <= reach.r_max && perpendicularity_error(patch_in_base) <= reach.yaw_tolerance
}

/// Per-frame displacement request for the end effector, in the base frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EffectorDelta {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dpitch: f64,
    pub dyaw: f64,
}

impl EffectorDelta {
    pub fn is_zero(&self) -> bool {
        *self == EffectorDelta::default()
    }
}

/// Image-space errors of the servo target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoObservation {
    pub x_p: f64,
    pub y_p: f64,
    pub psi_p: f64,
    /// Optical depth to the target, when the sensor returns one.
    pub depth: Option<f64>,
}

/// Kinematic quantities the supervisor needs alongside the image errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoContext {
    pub effector: EffectorPose,
    /// Camera center height in the base frame.
    pub camera_z: f64,
    /// Horizontal camera-minus-gripper offset, base frame.
    pub camera_offset: Vector2<f64>,
    pub contact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ServoTarget {
    /// Pick a brick; the surface height comes from depth.
    Pickup { brick_height: f64 },
    /// Lower a held brick of this height onto a surface of known height.
    Drop { surface: f64, brick_height: f64 },
}

/// Four-stage servo supervisor for one pickup or drop attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoSupervisor {
    pub stage: ServoStage,
    pub gains: ServoGains,
    pub tol: ServoTolerances,
    pub target: ServoTarget,
    pub max_missing: u32,
    missing: u32,
    /// Gripper face height that ends the descent.
    goal_z: Option<f64>,
    shifted: bool,
}

impl ServoSupervisor {
    pub fn new(target: ServoTarget, gains: ServoGains, tol: ServoTolerances) -> Self {
        Self { stage: ServoStage::XPitch, gains, tol, target, max_missing: 3, missing: 0, goal_z: None, shifted: false }
    }

    pub fn goal_z(&self) -> Option<f64> {
        self.goal_z
    }

    fn to_base(psi: f64, dx: f64, dy: f64) -> (f64, f64) {
        let (s, c) = psi.sin_cos();
        (c * dx - s * dy, s * dx + c * dy)
    }

    /// Advances on one camera frame. `obs` is `None` when the target is not
    /// visible in this frame.
    pub fn step(&mut self, obs: Option<ServoObservation>, ctx: &ServoContext) -> Result<EffectorDelta, ControlError> {
        let e = &ctx.effector;
        let mut out = EffectorDelta::default();
        if matches!(self.stage, ServoStage::XPitch | ServoStage::YServo | ServoStage::YawServo) {
            let Some(o) = obs else {
                self.missing += 1;
                if self.missing >= self.max_missing {
                    return Err(ControlError::PatchLost(self.missing));
                }
                return Ok(out);
            };
            self.missing = 0;
            match self.stage {
                ServoStage::XPitch => {
                    let (dth, dx, done) = servo_x_pitch(e.pitch, o.y_p, &self.gains, &self.tol);
                    if done {
                        self.stage = ServoStage::YServo;
                    } else {
                        out.dpitch = dth;
                        (out.dx, out.dy) = Self::to_base(e.yaw, dx, 0.0);
                    }
                }
                ServoStage::YServo => {
                    let (dy, _, _) = servo_y_yaw(o.x_p, o.psi_p, &self.gains, &self.tol);
                    if o.x_p.abs() <= self.tol.eps_x {
                        self.stage = ServoStage::YawServo;
                    } else {
                        (out.dx, out.dy) = Self::to_base(e.yaw, 0.0, dy);
                    }
                }
                ServoStage::YawServo => {
                    let (dy, dpsi, done) = servo_y_yaw(o.x_p, o.psi_p, &self.gains, &self.tol);
                    if done && o.y_p.abs() <= self.tol.eps_y {
                        self.stage = ServoStage::ZApproach;
                        self.enter_z(o, ctx);
                    } else {
                        // yawing swings the camera around the gripper, so the
                        // centering terms stay active
                        let (_, dx, _) = servo_x_pitch(e.pitch, o.y_p, &self.gains, &self.tol);
                        (out.dx, out.dy) = Self::to_base(e.yaw, dx, dy);
                        out.dyaw = dpsi;
                    }
                }
                _ => unreachable!(),
            }
            return Ok(out);
        }
        match self.stage {
            ServoStage::ZApproach => {
                if !self.shifted {
                    self.shifted = true;
                    out.dx = ctx.camera_offset.x;
                    out.dy = ctx.camera_offset.y;
                    return Ok(out);
                }
                let goal = self.goal_z.unwrap_or(0.0);
                match z_approach(e.z - goal, ctx.contact, &self.gains) {
                    None => self.stage = ServoStage::Done,
                    Some(dz) => out.dz = -dz,
                }
                Ok(out)
            }
            _ => Ok(out),
        }
    }

    fn enter_z(&mut self, o: ServoObservation, ctx: &ServoContext) {
        self.goal_z = Some(match self.target {
            ServoTarget::Pickup { brick_height } => {
                // depth lost: assume the top of a single brick
                let surface = o.depth.map(|d| ctx.camera_z - d).unwrap_or(brick_height);
                z_snap(surface, brick_height)
            }
            ServoTarget::Drop { surface, brick_height } => surface + brick_height,
        });
    }
}
