//! Metric patch and footprint poses from image measurements.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::control::z_snap;
use crate::geometry::{
    normalize_angle, patch_pose_from_endpoints, pixel_to_metric, ray_height_intersect, transform_point, Frame, FrameTransform,
    FramedPoint, GeometryError, ImagePoint, PinholeCamera, PlanarPose,
};
use crate::render::{LabelImage, PointCloud};

use super::detect::PatchCandidate;
use super::hull::{convex_hull, min_area_rect, pixel_hull};
use super::VisionError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchEstimate {
    /// Patch center and axis in the base frame.
    pub pose: PlanarPose,
    /// Median measured height before snapping.
    pub measured_height: f64,
    pub layers: u32,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Image point through the camera onto the horizontal plane `z = h`.
pub fn image_to_plane(p: ImagePoint, cam: &PinholeCamera, h: f64) -> Result<Vector2<f64>, GeometryError> {
    let mm = pixel_to_metric(p, &cam.intrinsics);
    let camera_frame = FrameTransform::new(cam.pose, Frame::Camera, Frame::Base);
    let proj = transform_point(&camera_frame, &FramedPoint::new(Frame::Camera, mm.x / 1000.0, mm.y / 1000.0, mm.z / 1000.0))?;
    let (x, y) = ray_height_intersect(&cam.center(), &proj.p.coords, h)?;
    Ok(Vector2::new(x, y))
}

/// `cam.pose` and `cloud` are both expressed in the base frame.
pub fn estimate_patch_pose(c: &PatchCandidate, cam: &PinholeCamera, cloud: &PointCloud, h_b: f64) -> Result<PatchEstimate, VisionError> {
    let zs: Vec<f64> = c.pixels.iter().filter_map(|&(col, row)| cloud.get(col as usize, row as usize)).map(|p| p.z).collect();
    if zs.is_empty() {
        return Err(VisionError::NoDepth);
    }
    let measured = median(zs);
    let h = z_snap(measured, h_b);
    let a = image_to_plane(c.p1, cam, h)?;
    let b = image_to_plane(c.p2, cam, h)?;
    let pose = patch_pose_from_endpoints(a, b, h)?;
    Ok(PatchEstimate { pose, measured_height: measured, layers: (h / h_b).round() as u32 })
}

/// Applies the base-to-map transform to a planar pose.
pub fn to_map_frame(pose: &PlanarPose, t: &FrameTransform) -> Result<PlanarPose, VisionError> {
    if t.source != Frame::Base {
        return Err(GeometryError::FrameMismatch { expected: Frame::Base, actual: t.source }.into());
    }
    let p = transform_point(t, &FramedPoint::new(Frame::Base, pose.x, pose.y, pose.z))?;
    let yaw = pose.yaw + t.pose().yaw;
    Ok(PlanarPose { x: p.p.x, y: p.p.y, z: p.p.z, yaw: crate::geometry::axis_angle(yaw) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintEstimate {
    /// Rightmost near corner; `yaw` points along the wall toward its far end.
    pub corner: PlanarPose,
    pub visible_length: f64,
    pub width: f64,
}

/// Projects the pattern outline onto the ground and fits a rectangle to it.
/// The camera pose is in the base frame; the result is too.
pub fn estimate_footprint_pose(labels: &LabelImage, cam: &PinholeCamera) -> Result<FootprintEstimate, VisionError> {
    let mut pixels = Vec::new();
    for row in 0..labels.height {
        for col in 0..labels.width {
            if labels.get(col, row).is_pattern() {
                pixels.push((col as u32, row as u32));
            }
        }
    }
    if pixels.len() < 3 {
        return Err(VisionError::NotVisible);
    }
    let k = &cam.intrinsics;
    let img_hull = pixel_hull(&pixels, k.cx, k.cy);
    let ground: Vec<Vector2<f64>> =
        img_hull.iter().map(|p| image_to_plane(ImagePoint::new(p.x, p.y), cam, 0.0)).collect::<Result<_, _>>()?;
    let hull = convex_hull(&ground);
    let rect = min_area_rect(&hull)?;
    let mut d = rect.axis();
    // the wall runs to the robot's left from its rightmost corner
    if d.y < 0.0 || (d.y == 0.0 && d.x < 0.0) {
        d = -d;
    }
    let n = Vector2::new(-d.y, d.x);
    let corner = rect.center - d * (rect.length / 2.0) + n * (rect.width / 2.0);
    Ok(FootprintEstimate {
        corner: PlanarPose { x: corner.x, y: corner.y, z: 0.0, yaw: normalize_angle(d.y.atan2(d.x)) },
        visible_length: rect.length,
        width: rect.width,
    })
}
