//! Base and arm kinematics, and the localization error model.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::{ArmReach, ControlError, EffectorDelta};
use crate::geometry::{normalize_angle, RigidPose};
use crate::world::{EffectorPose, WorldState};

/// Exact unicycle motion over `dt` at constant `(v, omega)`.
pub fn integrate_base(pose: &RigidPose, v: f64, omega: f64, dt: f64) -> RigidPose {
    let psi = pose.yaw;
    if omega.abs() < 1e-12 {
        return RigidPose::planar(pose.x + v * dt * psi.cos(), pose.y + v * dt * psi.sin(), psi);
    }
    let r = v / omega;
    let psi2 = psi + omega * dt;
    RigidPose::planar(pose.x + r * (psi2.sin() - psi.sin()), pose.y - r * (psi2.cos() - psi.cos()), psi2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectorLimits {
    /// Largest translation per tick along each axis, meters.
    pub step: f64,
    /// Largest rotation per tick, radians.
    pub rot_step: f64,
    pub reach: ArmReach,
}

impl Default for EffectorLimits {
    fn default() -> Self {
        Self { step: 0.025, rot_step: 0.03, reach: ArmReach::default() }
    }
}

/// Per-tick clamp of a displacement request.
pub fn clamp_delta(d: &EffectorDelta, lim: &EffectorLimits) -> EffectorDelta {
    let c = |v: f64, m: f64| v.clamp(-m, m);
    EffectorDelta {
        dx: c(d.dx, lim.step),
        dy: c(d.dy, lim.step),
        dz: c(d.dz, lim.step),
        dpitch: c(d.dpitch, lim.rot_step),
        dyaw: c(d.dyaw, lim.rot_step),
    }
}

/// Applies one rate-limited step. The gripper (or the brick it holds) never
/// goes below the surface under it; pitch stays in `[0, pi/2]`.
pub fn move_effector(world: &mut WorldState, delta: &EffectorDelta, lim: &EffectorLimits) -> Result<EffectorDelta, ControlError> {
    let d = clamp_delta(delta, lim);
    let e = world.effector;
    let mut n = EffectorPose {
        x: e.x + d.dx,
        y: e.y + d.dy,
        z: e.z + d.dz,
        pitch: (e.pitch + d.dpitch).clamp(0.0, std::f64::consts::FRAC_PI_2),
        yaw: normalize_angle(e.yaw + d.dyaw),
    };
    let r = n.planar_range();
    if r < lim.reach.r_min - 1e-9 || r > lim.reach.r_max + 1e-9 {
        return Err(ControlError::OutOfEnvelope);
    }
    world.effector = n;
    let gap = world.gripper_bottom() - {
        let g = world.gripper_in_map();
        world.surface_height(g.x, g.y)
    };
    if gap < 0.0 {
        n.z -= gap;
        world.effector = n;
    }
    Ok(EffectorDelta { dx: n.x - e.x, dy: n.y - e.y, dz: n.z - e.z, dpitch: n.pitch - e.pitch, dyaw: normalize_angle(n.yaw - e.yaw) })
}

/// Cylindrical interpolation between two arm poses, so the path keeps clear
/// of the arm axis.
pub fn interpolate_effector(a: &EffectorPose, b: &EffectorPose, s: f64) -> EffectorPose {
    let s = s.clamp(0.0, 1.0);
    let (ra, rb) = (a.planar_range(), b.planar_range());
    let (pa, pb) = (a.y.atan2(a.x), b.y.atan2(b.x));
    let r = ra + (rb - ra) * s;
    let p = pa + normalize_angle(pb - pa) * s;
    EffectorPose {
        x: r * p.cos(),
        y: r * p.sin(),
        z: a.z + (b.z - a.z) * s,
        pitch: a.pitch + (b.pitch - a.pitch) * s,
        yaw: normalize_angle(a.yaw + normalize_angle(b.yaw - a.yaw) * s),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalizationNoise {
    pub sigma_xy: f64,
    pub sigma_yaw: f64,
}

impl LocalizationNoise {
    pub fn is_off(&self) -> bool {
        self.sigma_xy == 0.0 && self.sigma_yaw == 0.0
    }
}

/// Independent Gaussian perturbation of a true pose.
pub fn localization_estimate<R: Rng>(pose: &RigidPose, rng: &mut R, sigma: &LocalizationNoise) -> RigidPose {
    if sigma.is_off() {
        return *pose;
    }
    let nxy = Normal::new(0.0, sigma.sigma_xy).expect("finite sigma");
    let nyaw = Normal::new(0.0, sigma.sigma_yaw).expect("finite sigma");
    RigidPose::planar(pose.x + nxy.sample(rng), pose.y + nxy.sample(rng), pose.yaw + nyaw.sample(rng))
}

/// Slowly drifting localization offset: a first-order Gauss-Markov process
/// whose stationary distribution is `N(0, sigma^2)` per component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationDrift {
    pub sigma: LocalizationNoise,
    pub correlation_time: f64,
    pub offset: [f64; 3],
}

impl LocalizationDrift {
    pub fn new<R: Rng>(sigma: LocalizationNoise, correlation_time: f64, rng: &mut R) -> Self {
        let o = localization_estimate(&RigidPose::identity(), rng, &sigma);
        Self { sigma, correlation_time, offset: [o.x, o.y, o.yaw] }
    }

    pub fn advance<R: Rng>(&mut self, dt: f64, rng: &mut R) {
        if self.sigma.is_off() {
            return;
        }
        let rho = (-dt / self.correlation_time).exp();
        let k = (1.0 - rho * rho).sqrt();
        let fresh = localization_estimate(&RigidPose::identity(), rng, &self.sigma);
        self.offset = [rho * self.offset[0] + k * fresh.x, rho * self.offset[1] + k * fresh.y, rho * self.offset[2] + k * fresh.yaw];
    }

    pub fn apply(&self, pose: &RigidPose) -> RigidPose {
        RigidPose::planar(pose.x + self.offset[0], pose.y + self.offset[1], pose.yaw + self.offset[2])
    }
}
