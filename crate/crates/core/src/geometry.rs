//! Frames, rigid transforms and the pinhole camera model.
//!
//! Image points are signed and centered on the principal point: `x` grows to
//! the right, `y` grows downward. Camera frames follow the optical
//! convention (`z` along the optical axis, `x` right, `y` down).

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("ray is parallel to the horizontal plane (dz = {0:e})")]
    DegenerateRay(f64),
    #[error("axis endpoints coincide")]
    DegenerateAxis,
    #[error("frame mismatch: expected {expected}, got {actual}")]
    FrameMismatch { expected: Frame, actual: Frame },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Canonical angle of an undirected axis, in (-pi/2, pi/2].
pub fn axis_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(PI);
    if r > FRAC_PI_2 {
        r -= PI;
    }
    r
}

/// Smallest signed difference between two undirected axis angles.
pub fn axis_angle_diff(a: f64, b: f64) -> f64 {
    axis_angle(a - b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Frame {
    Map,
    Base,
    Camera,
    Effector,
    Footprint,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Frame::Map => "L_M",
            Frame::Base => "L_B",
            Frame::Camera => "L_C",
            Frame::Effector => "L_E",
            Frame::Footprint => "L_F",
        };
        f.write_str(s)
    }
}

/// Position and roll/pitch/yaw orientation. Rotation is `Rz(yaw) Ry(pitch) Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RigidPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl RigidPose {
    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            roll: normalize_angle(roll),
            pitch: normalize_angle(pitch),
            yaw: normalize_angle(yaw),
        }
    }

    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Self::new(x, y, 0.0, 0.0, 0.0, yaw)
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(self.x, self.y, self.z),
            UnitQuaternion::from_euler_angles(self.roll, self.pitch, self.yaw),
        )
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let (roll, pitch, yaw) = iso.rotation.euler_angles();
        let t = iso.translation.vector;
        Self::new(t.x, t.y, t.z, roll, pitch, yaw)
    }

    /// `self ∘ other`: `other` expressed in the frame described by `self`.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose::from_isometry(&(self.to_isometry() * other.to_isometry()))
    }

    pub fn inverse(&self) -> RigidPose {
        RigidPose::from_isometry(&self.to_isometry().inverse())
    }

    pub fn planar_distance(&self, other: &RigidPose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A point tagged with the frame it is expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramedPoint {
    pub frame: Frame,
    pub p: Point3<f64>,
}

impl FramedPoint {
    pub fn new(frame: Frame, x: f64, y: f64, z: f64) -> Self {
        Self { frame, p: Point3::new(x, y, z) }
    }
}

/// Maps coordinates expressed in `source` into `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTransform {
    pub iso: Isometry3<f64>,
    pub source: Frame,
    pub target: Frame,
}

impl FrameTransform {
    pub fn new(iso: Isometry3<f64>, source: Frame, target: Frame) -> Self {
        Self { iso, source, target }
    }

    pub fn identity(frame: Frame) -> Self {
        Self::new(Isometry3::identity(), frame, frame)
    }

    pub fn from_pose(pose: &RigidPose, source: Frame, target: Frame) -> Self {
        Self::new(pose.to_isometry(), source, target)
    }

    pub fn inverse(&self) -> Self {
        Self::new(self.iso.inverse(), self.target, self.source)
    }

    /// `self ∘ inner`; `inner.target` must equal `self.source`.
    pub fn compose(&self, inner: &FrameTransform) -> Result<FrameTransform, GeometryError> {
        if inner.target != self.source {
            return Err(GeometryError::FrameMismatch { expected: self.source, actual: inner.target });
        }
        Ok(Self::new(self.iso * inner.iso, inner.source, self.target))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.iso.rotation.to_rotation_matrix().matrix()
    }

    pub fn orthonormality_residual(&self) -> f64 {
        let r = self.rotation_matrix();
        (r.transpose() * r - Matrix3::identity()).norm()
    }

    pub fn pose(&self) -> RigidPose {
        RigidPose::from_isometry(&self.iso)
    }
}

pub fn transform_point(t: &FrameTransform, p: &FramedPoint) -> Result<FramedPoint, GeometryError> {
    if p.frame != t.source {
        return Err(GeometryError::FrameMismatch { expected: t.source, actual: p.frame });
    }
    Ok(FramedPoint { frame: t.target, p: t.iso * p.p })
}

/// Pinhole intrinsics. The principal point is given in pixel-edge coordinates
/// (the image spans `[0, width] x [0, height]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_px: f64,
    pub focal_mm: f64,
    pub width: u32,
    pub height: u32,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(focal_px: f64, focal_mm: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self {
            focal_px,
            focal_mm,
            width,
            height,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        };
        k.validate()?;
        Ok(k)
    }

    /// 640x480 with a 460 px focal length (about 69 degrees horizontal field of view).
    pub fn realsense_like() -> Self {
        Self::new(460.0, 1.93, 640, 480).expect("static intrinsics are valid")
    }

    /// Same field of view at a different resolution.
    pub fn scaled(&self, width: u32, height: u32) -> Self {
        let s = width as f64 / self.width as f64;
        Self {
            focal_px: self.focal_px * s,
            focal_mm: self.focal_mm,
            width,
            height,
            cx: self.cx * s,
            cy: self.cy * height as f64 / self.height as f64,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.focal_px > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("focal_px must be positive"));
        }
        if !(self.focal_mm > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("focal_mm must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image must be non-empty"));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics("principal point outside image"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Signed image coordinates of the center of pixel `(col, row)`.
    pub fn pixel_center(&self, col: u32, row: u32) -> ImagePoint {
        ImagePoint::new(col as f64 + 0.5 - self.cx, row as f64 + 0.5 - self.cy)
    }

    /// Pixel containing a signed image point, if inside the image.
    pub fn pixel_of(&self, p: ImagePoint) -> Option<(u32, u32)> {
        let u = p.x + self.cx;
        let v = p.y + self.cy;
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return None;
        }
        Some((u as u32, v as u32))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
}

impl ImagePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

/// Point on the image plane `z = focal_mm`, in millimeters, camera frame.
pub fn pixel_to_metric(p: ImagePoint, k: &CameraIntrinsics) -> Vector3<f64> {
    let s = k.focal_mm / k.focal_px;
    Vector3::new(p.x * s, p.y * s, k.focal_mm)
}

/// Intersects the line through `cam` and `proj` with the plane `z = h`.
pub fn ray_height_intersect(cam: &Vector3<f64>, proj: &Vector3<f64>, h: f64) -> Result<(f64, f64), GeometryError> {
    let dz = cam.z - proj.z;
    if dz.abs() < 1e-9 {
        return Err(GeometryError::DegenerateRay(dz));
    }
    let s = (cam.z - h) / dz;
    let x = cam.x - (cam.x - proj.x) * s;
    let y = cam.y - (cam.y - proj.y) * s;
    Ok((x, y))
}

/// Center and undirected heading of a planar axis at height `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl PlanarPose {
    pub fn to_rigid(&self) -> RigidPose {
        RigidPose::new(self.x, self.y, self.z, 0.0, 0.0, self.yaw)
    }
}

pub fn patch_pose_from_endpoints(p1: Vector2<f64>, p2: Vector2<f64>, h: f64) -> Result<PlanarPose, GeometryError> {
    let d = p2 - p1;
    if d.norm() <= 1e-6 {
        return Err(GeometryError::DegenerateAxis);
    }
    let c = (p1 + p2) * 0.5;
    Ok(PlanarPose { x: c.x, y: c.y, z: h, yaw: axis_angle(d.y.atan2(d.x)) })
}

/// Orientation of the optical frame inside the effector frame: the optical
/// axis is the effector `x` axis, image right is effector `-y`.
pub fn optical_in_effector() -> UnitQuaternion<f64> {
    let m = Matrix3::new(
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, //
        0.0, -1.0, 0.0,
    );
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

/// A calibrated camera placed in some parent frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub intrinsics: CameraIntrinsics,
    /// Camera (optical) frame to parent frame.
    pub pose: Isometry3<f64>,
}

impl PinholeCamera {
    pub fn new(intrinsics: CameraIntrinsics, pose: Isometry3<f64>) -> Self {
        Self { intrinsics, pose }
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation.vector
    }

    /// Projects a parent-frame point; `None` when behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<ImagePoint> {
        let pc = self.pose.inverse_transform_point(p);
        if pc.z <= 1e-9 {
            return None;
        }
        let f = self.intrinsics.focal_px;
        Some(ImagePoint::new(f * pc.x / pc.z, f * pc.y / pc.z))
    }

    /// Depth along the optical axis of a parent-frame point.
    pub fn depth_of(&self, p: &Point3<f64>) -> f64 {
        self.pose.inverse_transform_point(p).z
    }

    /// Ray direction in the parent frame with unit optical-axis component, so
    /// `center + t * dir` sits at depth `t`.
    pub fn ray_dir(&self, p: ImagePoint) -> Vector3<f64> {
        let f = self.intrinsics.focal_px;
        self.pose.rotation * Vector3::new(p.x / f, p.y / f, 1.0)
    }

    /// Image-plane point of a pixel expressed in the parent frame (meters).
    pub fn image_plane_point(&self, p: ImagePoint) -> Vector3<f64> {
        let mm = pixel_to_metric(p, &self.intrinsics);
        (self.pose * Point3::from(mm / 1000.0)).coords
    }

    /// Metric footprint of one pixel at the given range.
    pub fn ground_sample_distance(&self, range: f64) -> f64 {
        range / self.intrinsics.focal_px
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 5.0, 640, 480).unwrap()
    }

    #[test]
    fn pixel_to_metric_examples() {
        assert_eq!(pixel_to_metric(ImagePoint::new(0.0, 0.0), &k()).x, 0.0);
        assert_abs_diff_eq!(pixel_to_metric(ImagePoint::new(100.0, 0.0), &k()).x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pixel_to_metric(ImagePoint::new(-100.0, 0.0), &k()).x, -1.0, epsilon = 1e-12);
        assert_eq!(pixel_to_metric(ImagePoint::new(3.0, 7.0), &k()).z, 5.0);
    }

    #[test]
    fn ray_height_examples() {
        let (x, y) = ray_height_intersect(&Vector3::new(0.0, 0.0, 2.0), &Vector3::new(1.0, 0.0, 1.0), 0.0).unwrap();
        assert_abs_diff_eq!(x, 2.0);
        assert_abs_diff_eq!(y, 0.0);
        let (x, y) = ray_height_intersect(&Vector3::new(0.0, 0.0, 2.0), &Vector3::new(0.0, 0.0, 1.0), 0.0).unwrap();
        assert_eq!((x, y), (0.0, 0.0));
        assert!(matches!(
            ray_height_intersect(&Vector3::new(0.0, 0.0, 1.0), &Vector3::new(1.0, 0.0, 1.0), 0.0),
            Err(GeometryError::DegenerateRay(_))
        ));
    }

    #[test]
    fn transform_point_examples() {
        let p = FramedPoint::new(Frame::Base, 0.3, -0.2, 1.0);
        let id = FrameTransform::identity(Frame::Base);
        assert_eq!(transform_point(&id, &p).unwrap().p, p.p);

        let t = FrameTransform::from_pose(&RigidPose::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0), Frame::Base, Frame::Map);
        let o = transform_point(&t, &FramedPoint::new(Frame::Base, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(o.frame, Frame::Map);
        assert_abs_diff_eq!(o.p.coords, Vector3::new(1.0, 2.0, 3.0), epsilon = 1e-12);

        let wrong = FramedPoint::new(Frame::Camera, 0.0, 0.0, 0.0);
        assert!(matches!(transform_point(&t, &wrong), Err(GeometryError::FrameMismatch { .. })));
    }

    #[test]
    fn compose_checks_frames() {
        let a = FrameTransform::identity(Frame::Base);
        let b = FrameTransform::new(Isometry3::identity(), Frame::Camera, Frame::Map);
        assert!(a.compose(&b).is_err());
        let c = FrameTransform::new(Isometry3::identity(), Frame::Camera, Frame::Base);
        let ac = a.compose(&c).unwrap();
        assert_eq!((ac.source, ac.target), (Frame::Camera, Frame::Base));
    }

    #[test]
    fn patch_pose_examples() {
        let p = patch_pose_from_endpoints(Vector2::new(0.0, 0.0), Vector2::new(2.0, 0.0), 0.2).unwrap();
        assert_eq!((p.x, p.y, p.z, p.yaw), (1.0, 0.0, 0.2, 0.0));
        let p = patch_pose_from_endpoints(Vector2::new(0.0, 0.0), Vector2::new(0.0, 2.0), 0.0).unwrap();
        assert_abs_diff_eq!(p.yaw, FRAC_PI_2);
        let p = patch_pose_from_endpoints(Vector2::new(1.0, 1.0), Vector2::new(3.0, 3.0), 0.0).unwrap();
        assert_abs_diff_eq!(p.x, 2.0);
        assert_abs_diff_eq!(p.y, 2.0);
        assert_abs_diff_eq!(p.yaw, PI / 4.0);
        assert_eq!(
            patch_pose_from_endpoints(Vector2::new(1.0, 1.0), Vector2::new(1.0, 1.0), 0.0),
            Err(GeometryError::DegenerateAxis)
        );
    }

    #[test]
    fn angle_helpers() {
        assert_abs_diff_eq!(normalize_angle(3.0 * PI), PI);
        assert_abs_diff_eq!(normalize_angle(-PI), PI);
        assert_abs_diff_eq!(axis_angle(-FRAC_PI_2), FRAC_PI_2);
        assert_abs_diff_eq!(axis_angle(PI), 0.0);
        assert_abs_diff_eq!(axis_angle(3.0 * PI / 4.0), -PI / 4.0);
    }

    #[test]
    fn optical_frame_axes() {
        let q = optical_in_effector();
        // optical axis along effector x, image right along -y, image down along -z
        assert_abs_diff_eq!(q * Vector3::z(), Vector3::x(), epsilon = 1e-12);
        assert_abs_diff_eq!(q * Vector3::x(), -Vector3::y(), epsilon = 1e-12);
        assert_abs_diff_eq!(q * Vector3::y(), -Vector3::z(), epsilon = 1e-12);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 10, 10).is_err());
        let mut k = k();
        k.cx = 700.0;
        assert!(k.validate().is_err());
    }

    #[test]
    fn camera_project_and_ray_agree() {
        let pose = RigidPose::new(0.2, -0.1, 1.3, 0.0, 0.7, 0.3).to_isometry() * Isometry3::from_parts(Translation3::identity(), optical_in_effector());
        let cam = PinholeCamera::new(k(), pose);
        let target = Point3::new(1.5, 0.2, 0.2);
        let ip = cam.project(&target).unwrap();
        let d = cam.ray_dir(ip);
        let t = cam.depth_of(&target);
        let back = cam.center() + d * t;
        assert_abs_diff_eq!(back, target.coords, epsilon = 1e-9);
    }

    fn finite() -> impl Strategy<Value = f64> {
        -10.0..10.0f64
    }

    proptest! {
        #[test]
        fn pixel_to_metric_is_linear(x in finite(), y in finite(), a in -5.0..5.0f64) {
            let k = k();
            let p = pixel_to_metric(ImagePoint::new(x, y), &k);
            let q = pixel_to_metric(ImagePoint::new(x, y).scale(a), &k);
            prop_assert!((q.x - a * p.x).abs() < 1e-9);
            prop_assert!((q.y - a * p.y).abs() < 1e-9);
        }

        #[test]
        fn ray_intersection_oracle(
            cx in finite(), cy in finite(), cz in 1.0..3.0f64,
            px in finite(), py in finite(), pz in -1.0..0.9f64,
            h in -0.5..0.9f64,
            scale in 0.1..10.0f64,
        ) {
            let cam = Vector3::new(cx, cy, cz);
            let proj = Vector3::new(px, py, pz);
            let (x, y) = ray_height_intersect(&cam, &proj, h).unwrap();
            // parametric line oracle
            let t = (cz - h) / (cz - pz);
            let expect = cam + (proj - cam) * t;
            prop_assert!((x - expect.x).abs() < 1e-9 * (1.0 + expect.x.abs()));
            prop_assert!((y - expect.y).abs() < 1e-9 * (1.0 + expect.y.abs()));
            // collinearity residual
            let hit = Vector3::new(x, y, h);
            let r = (hit - cam).cross(&(proj - cam)).norm() / (proj - cam).norm();
            prop_assert!(r < 1e-9 * (1.0 + (hit - cam).norm()));
            // scaling the direction changes nothing
            let proj2 = cam + (proj - cam) * scale;
            let (x2, y2) = ray_height_intersect(&cam, &proj2, h).unwrap();
            prop_assert!((x - x2).abs() < 1e-8 * (1.0 + x.abs()) && (y - y2).abs() < 1e-8 * (1.0 + y.abs()));
        }

        #[test]
        fn transform_inverse_roundtrip(
            x in finite(), y in finite(), z in finite(),
            r in -3.0..3.0f64, p in -1.5..1.5f64, w in -3.0..3.0f64,
            px in finite(), py in finite(), pz in finite(), qx in finite(), qy in finite(), qz in finite(),
        ) {
            let t = FrameTransform::from_pose(&RigidPose::new(x, y, z, r, p, w), Frame::Base, Frame::Map);
            prop_assert!(t.orthonormality_residual() < 1e-9);
            let a = FramedPoint::new(Frame::Base, px, py, pz);
            let b = FramedPoint::new(Frame::Base, qx, qy, qz);
            let ta = transform_point(&t, &a).unwrap();
            let tb = transform_point(&t, &b).unwrap();
            prop_assert!(((ta.p - tb.p).norm() - (a.p - b.p).norm()).abs() < 1e-9);
            let back = transform_point(&t.inverse(), &ta).unwrap();
            prop_assert!((back.p - a.p).norm() < 1e-9);
            let pose = RigidPose::new(x, y, z, r, p, w);
            let id = pose.compose(&pose.inverse());
            prop_assert!(id.translation().norm() < 1e-9);
            prop_assert!(id.roll.abs() < 1e-9 && id.pitch.abs() < 1e-9 && id.yaw.abs() < 1e-9);
        }

        #[test]
        fn endpoint_pose_is_symmetric(ax in finite(), ay in finite(), bx in finite(), by in finite()) {
            prop_assume!((ax - bx).hypot(ay - by) > 1e-3);
            let p = patch_pose_from_endpoints(Vector2::new(ax, ay), Vector2::new(bx, by), 0.0).unwrap();
            let q = patch_pose_from_endpoints(Vector2::new(bx, by), Vector2::new(ax, ay), 0.0).unwrap();
            prop_assert!((p.x - q.x).abs() < 1e-12 && (p.y - q.y).abs() < 1e-12);
            prop_assert!(axis_angle_diff(p.yaw, q.yaw).abs() < 1e-12);
            prop_assert!(p.yaw > -FRAC_PI_2 && p.yaw <= FRAC_PI_2);
        }
    }
}
