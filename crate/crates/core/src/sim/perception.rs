//! Camera frames and the measurements the activities derive from them.

use nalgebra::{Isometry3, Point3};
use serde::{Deserialize, Serialize};

use crate::geometry::{axis_angle, CameraIntrinsics, ImagePoint, PinholeCamera, PlanarPose, RigidPose};
use crate::render::{DepthImage, LabelImage, PointCloud};

/// One rendered RGB-D frame with the camera pose that produced it.
#[derive(Debug, Clone)]
pub struct Frame {
    pub labels: LabelImage,
    pub depth: DepthImage,
    /// Optical frame to base frame.
    pub cam_base: Isometry3<f64>,
    pub k: CameraIntrinsics,
}

impl Frame {
    pub fn camera(&self) -> PinholeCamera {
        PinholeCamera::new(self.k, self.cam_base)
    }

    /// Base-frame point seen through pixel `(col, row)`.
    pub fn point(&self, col: u32, row: u32) -> Option<Point3<f64>> {
        let d = self.depth.get(col as usize, row as usize);
        if d <= 0.0 {
            return None;
        }
        let q = self.k.pixel_center(col, row);
        let f = self.k.focal_px;
        Some(self.cam_base * Point3::new(q.x * d / f, q.y * d / f, d))
    }

    pub fn point_at(&self, p: ImagePoint) -> Option<Point3<f64>> {
        let (c, r) = self.k.pixel_of(p)?;
        self.point(c, r)
    }

    /// Cloud holding only the listed pixels.
    pub fn sparse_cloud(&self, pixels: &[(u32, u32)]) -> PointCloud {
        let mut out = PointCloud::filled(self.depth.width, self.depth.height, None);
        for &(c, r) in pixels {
            out.set(c as usize, r as usize, self.point(c, r));
        }
        out
    }

    /// Median planar range of the points behind a pixel set.
    pub fn median_range(&self, pixels: &[(u32, u32)]) -> Option<f64> {
        let step = (pixels.len() / 400).max(1);
        let mut r: Vec<f64> = pixels.iter().step_by(step).filter_map(|&(c, w)| self.point(c, w)).map(|p| p.x.hypot(p.y)).collect();
        if r.is_empty() {
            return None;
        }
        r.sort_by(|a, b| a.total_cmp(b));
        Some(r[r.len() / 2])
    }
}

/// Mean of planar poses; yaw is averaged as an undirected axis when `axis`.
pub fn mean_pose(poses: &[PlanarPose], axis: bool) -> PlanarPose {
    let n = poses.len() as f64;
    let m = if axis { 2.0 } else { 1.0 };
    let (s, c) = poses.iter().fold((0.0, 0.0), |(s, c), p| (s + (m * p.yaw).sin(), c + (m * p.yaw).cos()));
    PlanarPose {
        x: poses.iter().map(|p| p.x).sum::<f64>() / n,
        y: poses.iter().map(|p| p.y).sum::<f64>() / n,
        z: poses.iter().map(|p| p.z).sum::<f64>() / n,
        yaw: s.atan2(c) / m,
    }
}

/// Planar pose expressed in the frame of `base`.
pub fn relative_to(base: &RigidPose, p: &RigidPose) -> PlanarPose {
    let (s, c) = base.yaw.sin_cos();
    let (dx, dy) = (p.x - base.x, p.y - base.y);
    PlanarPose { x: c * dx + s * dy, y: -s * dx + c * dy, z: p.z, yaw: crate::geometry::normalize_angle(p.yaw - base.yaw) }
}

/// Planar pose given in the frame of `base`, brought to the map.
pub fn from_base(base: &RigidPose, p: &PlanarPose) -> RigidPose {
    let (s, c) = base.yaw.sin_cos();
    RigidPose::new(base.x + c * p.x - s * p.y, base.y + s * p.x + c * p.y, p.z, 0.0, 0.0, crate::geometry::normalize_angle(base.yaw + p.yaw))
}

/// Image-space servo errors of a known map-frame target seen by a camera
/// at `cam_map`: center, axis angle and optical depth.
pub fn project_target(target: &RigidPose, cam_map: &Isometry3<f64>, k: &CameraIntrinsics) -> Option<(ImagePoint, f64, f64)> {
    let cam = PinholeCamera::new(*k, *cam_map);
    let c = Point3::new(target.x, target.y, target.z);
    let (s, co) = target.yaw.sin_cos();
    let a = Point3::new(target.x + 0.1 * co, target.y + 0.1 * s, target.z);
    let b = Point3::new(target.x - 0.1 * co, target.y - 0.1 * s, target.z);
    let pc = cam.project(&c)?;
    k.pixel_of(pc)?;
    let (pa, pb) = (cam.project(&a)?, cam.project(&b)?);
    let ang = axis_angle((pa.y - pb.y).atan2(pa.x - pb.x));
    Some((pc, ang, cam.depth_of(&c)))
}

/// Pose-detection error against ground truth, both in the base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub t: f64,
    pub footprint: bool,
    pub estimate: PlanarPose,
    pub truth: PlanarPose,
    /// Planar range to the true object.
    pub distance: f64,
    pub distance_error: f64,
    /// True object axis relative to the robot heading, degrees.
    pub orientation_deg: f64,
    pub orientation_error_deg: f64,
}
