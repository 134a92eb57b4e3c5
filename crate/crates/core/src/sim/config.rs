use serde::{Deserialize, Serialize};

use crate::control::{ApproachGains, ServoGains, ServoTolerances};
use crate::geometry::CameraIntrinsics;
use crate::mission::MissionConfig;
use crate::nav::lidar::LidarConfig;
use crate::nav::{GateState, PlannerConfig, VelocityLimits};
use crate::render::SensorNoise;
use crate::vision::{DetectConfig, ScoringWeights, TrackerConfig};
use crate::world::EffectorPose;

use super::kinematics::{EffectorLimits, LocalizationNoise};

/// Sensor and localization noise of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sensor: SensorNoise,
    pub localization: LocalizationNoise,
}

impl NoiseParams {
    pub fn off() -> Self {
        Self { sensor: SensorNoise::off(), localization: LocalizationNoise::default() }
    }

    /// Calibrated so the experiment errors land near field magnitudes.
    pub fn field_like() -> Self {
        Self {
            sensor: SensorNoise { sigma_px: 2.0, depth_a: 0.0004 },
            localization: LocalizationNoise { sigma_xy: 0.05, sigma_yaw: 2f64.to_radians() },
        }
    }

    pub fn is_off(&self) -> bool {
        self.sensor.is_off() && self.localization.is_off()
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self::off()
    }
}

/// Activity time budgets, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timeouts {
    pub navigation: f64,
    pub approach: f64,
    pub detection: f64,
    pub servo: f64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Self { navigation: 150.0, approach: 60.0, detection: 10.0, servo: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub camera_period: f64,
    pub lidar_period: f64,
    /// Localization drift is resampled at this period...
    pub localization_period: f64,
    /// ...with this correlation time.
    pub localization_tau: f64,
    pub effector: EffectorLimits,
    pub intrinsics: CameraIntrinsics,
    pub limits: VelocityLimits,
    pub gate: GateState,
    pub planner: PlannerConfig,
    pub approach: ApproachGains,
    pub servo: ServoGains,
    pub servo_tol: ServoTolerances,
    pub detect: DetectConfig,
    pub tracker: TrackerConfig,
    pub scoring: ScoringWeights,
    pub mission: MissionConfig,
    pub lidar: LidarConfig,
    pub scan_buffer: usize,
    pub costmap_resolution: f64,
    pub z_low: f64,
    pub z_high: f64,
    /// Distance kept to a stack at the end of the initial approach.
    pub stack_standoff: f64,
    /// Distance kept to the pattern's rightmost point.
    pub wall_standoff: f64,
    pub patch_standoff: f64,
    pub cell_standoff: f64,
    /// Approach is done once |d - d_r| and |x_img| are both below these.
    pub approach_tol_d: f64,
    pub approach_tol_px: f64,
    pub search_omega: f64,
    /// Process and measurement noise of the distance filter.
    pub filter_q: f64,
    pub filter_r: f64,
    /// Estimates averaged during pose detection.
    pub detection_frames: usize,
    pub observe_pose: EffectorPose,
    pub basket_pose: EffectorPose,
    /// Lateral spacing of basket slots.
    pub basket_slot_pitch: f64,
    pub basket_op_time: f64,
    pub max_sim_time: f64,
    pub timeouts: Timeouts,
    /// Area navigation is answered immediately (single-task experiments).
    pub skip_area_navigation: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            camera_period: 0.2,
            lidar_period: 1.0,
            localization_period: 1.0,
            localization_tau: 30.0,
            effector: EffectorLimits::default(),
            intrinsics: CameraIntrinsics::realsense_like(),
            limits: VelocityLimits::default(),
            gate: GateState::default(),
            planner: PlannerConfig::default(),
            approach: ApproachGains::default(),
            servo: ServoGains::default(),
            servo_tol: ServoTolerances::default(),
            detect: DetectConfig::default(),
            tracker: TrackerConfig::default(),
            scoring: ScoringWeights::default(),
            mission: MissionConfig::default(),
            lidar: LidarConfig::default(),
            scan_buffer: 30,
            costmap_resolution: 0.1,
            z_low: 0.15,
            z_high: 1.0,
            stack_standoff: 1.6,
            wall_standoff: 1.3,
            patch_standoff: 0.9,
            cell_standoff: 0.8,
            approach_tol_d: 0.1,
            approach_tol_px: 20.0,
            search_omega: 0.4,
            filter_q: 0.05,
            filter_r: 0.01,
            detection_frames: 3,
            observe_pose: EffectorPose { x: 0.45, y: 0.0, z: 1.2, pitch: 0.6, yaw: 0.0 },
            basket_pose: EffectorPose { x: -0.4, y: 0.0, z: 0.6, pitch: std::f64::consts::FRAC_PI_2, yaw: 0.0 },
            basket_slot_pitch: 0.12,
            basket_op_time: 4.0,
            max_sim_time: 1800.0,
            timeouts: Timeouts::default(),
            skip_area_navigation: false,
        }
    }
}

impl SimConfig {
    fn ticks(&self, period: f64) -> u64 {
        (period / self.dt).round().max(1.0) as u64
    }

    pub fn camera_ticks(&self) -> u64 {
        self.ticks(self.camera_period)
    }

    pub fn lidar_ticks(&self) -> u64 {
        self.ticks(self.lidar_period)
    }

    pub fn localization_ticks(&self) -> u64 {
        self.ticks(self.localization_period)
    }

    /// Checks `dt > 0` and that every period is a whole number of ticks.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0) {
            return Err("dt must be positive".into());
        }
        for (name, p) in [("camera_period", self.camera_period), ("lidar_period", self.lidar_period), ("localization_period", self.localization_period)] {
            let n = p / self.dt;
            if !(p > 0.0) || (n - n.round()).abs() > 1e-6 {
                return Err(format!("{name} must be a positive multiple of dt"));
            }
        }
        if !(self.max_sim_time > 0.0) {
            return Err("max_sim_time must be positive".into());
        }
        if self.detection_frames == 0 {
            return Err("detection_frames must be at least 1".into());
        }
        self.intrinsics.validate().map_err(|e| e.to_string())
    }

    /// Arm pose above basket slot `slot`.
    pub fn slot_pose(&self, slot: usize) -> EffectorPose {
        let mut p = self.basket_pose;
        p.y += (slot as f64 - 1.5) * self.basket_slot_pitch;
        p
    }
}
