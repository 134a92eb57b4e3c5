//! Multi-beam lidar simulation against the brick boxes, and a rolling buffer
//! of recent scans.

use std::collections::VecDeque;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::RigidPose;
use crate::render::{ray_box, yaw_inv};
use crate::world::BrickBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarConfig {
    pub mount_height: f64,
    pub beams: usize,
    pub min_elevation: f64,
    pub max_elevation: f64,
    pub azimuth_steps: usize,
    pub max_range: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            mount_height: 0.7,
            beams: 8,
            min_elevation: -25f64.to_radians(),
            max_elevation: 5f64.to_radians(),
            azimuth_steps: 180,
            max_range: 10.0,
        }
    }
}

/// Map-frame hit points of one scan taken from `base`.
pub fn simulate_scan(boxes: &[BrickBox], base: &RigidPose, cfg: &LidarConfig) -> Vec<Point3<f64>> {
    let o = Vector3::new(base.x, base.y, cfg.mount_height);
    let locals: Vec<Vector3<f64>> = boxes.iter().map(|b| yaw_inv(b.yaw, &(o - b.center))).collect();
    let mut out = Vec::with_capacity(cfg.beams * cfg.azimuth_steps);
    for bi in 0..cfg.beams {
        let el = if cfg.beams == 1 {
            cfg.min_elevation
        } else {
            cfg.min_elevation + (cfg.max_elevation - cfg.min_elevation) * bi as f64 / (cfg.beams - 1) as f64
        };
        let (se, ce) = el.sin_cos();
        for ai in 0..cfg.azimuth_steps {
            let az = base.yaw + std::f64::consts::TAU * ai as f64 / cfg.azimuth_steps as f64;
            let d = Vector3::new(ce * az.cos(), ce * az.sin(), se);
            let mut t_best = cfg.max_range;
            if d.z < -1e-9 {
                t_best = t_best.min(-o.z / d.z);
            }
            for (b, lo) in boxes.iter().zip(&locals) {
                let ld = yaw_inv(b.yaw, &d);
                if let Some((t, _, _)) = ray_box(lo, &ld, &b.half) {
                    if t < t_best {
                        t_best = t;
                    }
                }
            }
            if t_best < cfg.max_range {
                out.push(Point3::from(o + d * t_best));
            }
        }
    }
    out
}

/// The most recent `capacity` scans.
#[derive(Debug, Clone)]
pub struct ScanBuffer {
    pub capacity: usize,
    scans: VecDeque<Vec<Point3<f64>>>,
}

impl ScanBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, scans: VecDeque::new() }
    }

    pub fn push(&mut self, scan: Vec<Point3<f64>>) {
        if self.scans.len() == self.capacity {
            self.scans.pop_front();
        }
        self.scans.push_back(scan);
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    pub fn points(&self) -> Vec<Point3<f64>> {
        self.scans.iter().flatten().copied().collect()
    }
}
