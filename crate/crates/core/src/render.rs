//! Synthetic RGB-D camera: label image + depth image by per-pixel ray casting
//! with a z-buffer.

use std::io::{self, Write};

use nalgebra::{Isometry3, Point3, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::CameraIntrinsics;
use crate::world::{BrickBox, BrickColor, WallFootprint, WorldState};

/// Rays farther than this (meters along the ray) return nothing.
pub const MAX_RANGE: f64 = 20.0;
/// Hits closer than this along the optical axis are dropped.
pub const NEAR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Ground,
    Red,
    Green,
    Blue,
    Orange,
    PatchGray,
    PatternYellow,
    PatternMagenta,
}

impl Label {
    pub const ALL: [Label; 9] = [
        Label::Background,
        Label::Ground,
        Label::Red,
        Label::Green,
        Label::Blue,
        Label::Orange,
        Label::PatchGray,
        Label::PatternYellow,
        Label::PatternMagenta,
    ];

    pub fn from_color(c: BrickColor) -> Label {
        match c {
            BrickColor::Red => Label::Red,
            BrickColor::Green => Label::Green,
            BrickColor::Blue => Label::Blue,
            BrickColor::Orange => Label::Orange,
        }
    }

    pub fn is_brick(self) -> bool {
        matches!(self, Label::Red | Label::Green | Label::Blue | Label::Orange)
    }

    pub fn is_pattern(self) -> bool {
        matches!(self, Label::PatternYellow | Label::PatternMagenta)
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Label::Background => [0, 0, 0],
            Label::Ground => [110, 100, 90],
            Label::Red => [200, 30, 30],
            Label::Green => [30, 170, 40],
            Label::Blue => [30, 60, 200],
            Label::Orange => [240, 140, 20],
            Label::PatchGray => [160, 160, 160],
            Label::PatternYellow => [240, 220, 30],
            Label::PatternMagenta => [220, 40, 200],
        }
    }
}

/// Row-major image buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Image<T> {
    pub fn filled(width: usize, height: usize, v: T) -> Self {
        Self { width, height, data: vec![v; width * height] }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: T) {
        self.data[row * self.width + col] = v;
    }
}

pub type LabelImage = Image<Label>;
/// Depth along the optical axis in meters; `0.0` marks no return.
pub type DepthImage = Image<f64>;

/// Pixel-wise 3D points; `None` where the depth image has no return.
pub type PointCloud = Image<Option<Point3<f64>>>;

/// Ground marking pattern drawn inside the wall footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternMarking {
    pub footprint: WallFootprint,
    pub stripe: f64,
}

/// What the camera can see.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub boxes: Vec<BrickBox>,
    pub pattern: Option<PatternMarking>,
}

impl Scene {
    pub fn from_world(world: &WorldState) -> Self {
        Self {
            boxes: world.boxes(),
            pattern: Some(PatternMarking { footprint: world.footprint.clone(), stripe: 0.25 }),
        }
    }

    fn ground_label(&self, x: f64, y: f64) -> Label {
        if let Some(p) = &self.pattern {
            let l = p.footprint.to_local(Vector2::new(x, y));
            if l.x >= 0.0 && l.x <= p.footprint.length && l.y <= 0.0 && l.y >= -p.footprint.width {
                return if ((l.x / p.stripe).floor() as i64) % 2 == 0 { Label::PatternYellow } else { Label::PatternMagenta };
            }
        }
        Label::Ground
    }
}

struct BoxRaster {
    b: BrickBox,
    origin: Vector3<f64>,
    du: Vector3<f64>,
    dv: Vector3<f64>,
    d0: Vector3<f64>,
    cols: (usize, usize),
    rows: (usize, usize),
}

pub(crate) fn yaw_inv(yaw: f64, v: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = yaw.sin_cos();
    Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
}

/// Slab test in the box frame: entry distance, entry axis, whether the ray
/// travels toward negative coordinates along that axis.
#[inline]
pub(crate) fn ray_box(o: &Vector3<f64>, d: &Vector3<f64>, h: &Vector3<f64>) -> Option<(f64, usize, bool)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut axis = 0;
    let mut neg_dir = false;
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if o[i].abs() > h[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[i];
        let mut a = (-h[i] - o[i]) * inv;
        let mut b = (h[i] - o[i]) * inv;
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        if a > t0 {
            t0 = a;
            axis = i;
            neg_dir = d[i] < 0.0;
        }
        t1 = t1.min(b);
        if t0 > t1 {
            return None;
        }
    }
    if t0 < 0.0 {
        return None;
    }
    Some((t0, axis, neg_dir))
}

/// Renders labels and optical-axis depth for a camera whose optical frame is
/// `camera` (camera to map).
pub fn render_rgbd(scene: &Scene, camera: &Isometry3<f64>, k: &CameraIntrinsics) -> (LabelImage, DepthImage) {
    let (w, h) = (k.width as usize, k.height as usize);
    let mut labels = LabelImage::filled(w, h, Label::Background);
    let mut depth = DepthImage::filled(w, h, 0.0);
    let r = camera.rotation.to_rotation_matrix();
    let m = r.matrix();
    let du = m.column(0) / k.focal_px;
    let dv = m.column(1) / k.focal_px;
    let d0 = m.column(2).into_owned();
    let c = camera.translation.vector;

    // ground plane
    for row in 0..h {
        let v = row as f64 + 0.5 - k.cy;
        for col in 0..w {
            let u = col as f64 + 0.5 - k.cx;
            let d = d0 + du * u + dv * v;
            if d.z >= 0.0 || c.z <= 0.0 {
                continue;
            }
            let t = -c.z / d.z;
            if t * d.norm() > MAX_RANGE || t < NEAR {
                continue;
            }
            let p = c + d * t;
            labels.set(col, row, scene.ground_label(p.x, p.y));
            depth.set(col, row, t);
        }
    }

    let inv = camera.inverse();
    let rasters: Vec<BoxRaster> = scene
        .boxes
        .iter()
        .filter_map(|b| {
            let mut corners = Vec::with_capacity(8);
            for sx in [-1.0, 1.0] {
                for sy in [-1.0, 1.0] {
                    for sz in [-1.0, 1.0] {
                        let (s, co) = b.yaw.sin_cos();
                        let lx = sx * b.half.x;
                        let ly = sy * b.half.y;
                        let p = Point3::new(b.center.x + co * lx - s * ly, b.center.y + s * lx + co * ly, b.center.z + sz * b.half.z);
                        corners.push(inv * p);
                    }
                }
            }
            if corners.iter().all(|p| p.z < NEAR) {
                return None;
            }
            let (cols, rows) = if corners.iter().any(|p| p.z < NEAR) {
                ((0, w), (0, h))
            } else {
                let mut umin = f64::MAX;
                let mut umax = f64::MIN;
                let mut vmin = f64::MAX;
                let mut vmax = f64::MIN;
                for p in &corners {
                    let u = p.x / p.z * k.focal_px + k.cx;
                    let v = p.y / p.z * k.focal_px + k.cy;
                    umin = umin.min(u);
                    umax = umax.max(u);
                    vmin = vmin.min(v);
                    vmax = vmax.max(v);
                }
                let clip = |lo: f64, hi: f64, n: usize| -> (usize, usize) {
                    let a = (lo.floor().max(0.0) as usize).min(n);
                    let b = ((hi.ceil() + 1.0).max(0.0) as usize).min(n);
                    (a, b)
                };
                (clip(umin, umax, w), clip(vmin, vmax, h))
            };
            if cols.0 >= cols.1 || rows.0 >= rows.1 {
                return None;
            }
            Some(BoxRaster {
                b: *b,
                origin: yaw_inv(b.yaw, &(c - b.center)),
                du: yaw_inv(b.yaw, &du.into_owned()),
                dv: yaw_inv(b.yaw, &dv.into_owned()),
                d0: yaw_inv(b.yaw, &d0),
                cols,
                rows,
            })
        })
        .collect();

    for br in &rasters {
        let label = Label::from_color(br.b.color);
        for row in br.rows.0..br.rows.1 {
            let v = row as f64 + 0.5 - k.cy;
            for col in br.cols.0..br.cols.1 {
                let u = col as f64 + 0.5 - k.cx;
                let d = br.d0 + br.du * u + br.dv * v;
                let Some((t, axis, neg)) = ray_box(&br.origin, &d, &br.b.half) else { continue };
                if t < NEAR || t * d.norm() > MAX_RANGE {
                    continue;
                }
                let cur = depth.get(col, row);
                if cur != 0.0 && cur <= t {
                    continue;
                }
                let mut lab = label;
                if axis == 2 && neg && br.b.show_patch {
                    let p = br.origin + d * t;
                    if p.x.abs() <= br.b.patch_half.x && p.y.abs() <= br.b.patch_half.y {
                        lab = Label::PatchGray;
                    }
                }
                labels.set(col, row, lab);
                depth.set(col, row, t);
            }
        }
    }
    (labels, depth)
}

/// Back-projects depth into 3D points expressed in the frame `camera` maps into.
pub fn cloud_from_depth(depth: &DepthImage, k: &CameraIntrinsics, camera: &Isometry3<f64>) -> PointCloud {
    let mut out = PointCloud::filled(depth.width, depth.height, None);
    for row in 0..depth.height {
        for col in 0..depth.width {
            let d = depth.get(col, row);
            if d > 0.0 {
                let q = k.pixel_center(col as u32, row as u32);
                let p = Point3::new(q.x * d / k.focal_px, q.y * d / k.focal_px, d);
                out.set(col, row, Some(camera * p));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorNoise {
    /// Standard deviation of the per-frame label boundary shift, pixels.
    pub sigma_px: f64,
    /// Depth variance coefficient: variance = a * d^2.
    pub depth_a: f64,
}

impl SensorNoise {
    pub fn off() -> Self {
        Self { sigma_px: 0.0, depth_a: 0.0 }
    }

    pub fn is_off(&self) -> bool {
        self.sigma_px == 0.0 && self.depth_a == 0.0
    }
}

const JITTER_ORDER: [Label; 7] = [
    Label::Red,
    Label::Green,
    Label::Blue,
    Label::Orange,
    Label::PatchGray,
    Label::PatternYellow,
    Label::PatternMagenta,
];

fn grow(labels: &mut LabelImage, target: Label, steps: usize, erode: bool) {
    let (w, h) = (labels.width, labels.height);
    for _ in 0..steps {
        let src = labels.clone();
        for row in 0..h {
            for col in 0..w {
                let here = src.get(col, row);
                if erode != (here == target) {
                    continue;
                }
                let mut nb = [None; 4];
                if col > 0 {
                    nb[0] = Some(src.get(col - 1, row));
                }
                if col + 1 < w {
                    nb[1] = Some(src.get(col + 1, row));
                }
                if row > 0 {
                    nb[2] = Some(src.get(col, row - 1));
                }
                if row + 1 < h {
                    nb[3] = Some(src.get(col, row + 1));
                }
                if erode {
                    if let Some(other) = nb.iter().flatten().find(|l| **l != target) {
                        labels.set(col, row, *other);
                    }
                } else if here != Label::Background && nb.iter().flatten().any(|l| *l == target) {
                    labels.set(col, row, target);
                }
            }
        }
    }
}

/// Boundary jitter on labels (each label class dilated or eroded by a
/// per-frame Gaussian pixel count) and range-proportional depth noise.
pub fn apply_sensor_noise<R: Rng>(labels: &LabelImage, depth: &DepthImage, rng: &mut R, noise: &SensorNoise) -> (LabelImage, DepthImage) {
    let mut l = labels.clone();
    let mut d = depth.clone();
    if noise.sigma_px > 0.0 {
        let n = Normal::new(0.0, noise.sigma_px).expect("finite sigma");
        for lab in JITTER_ORDER {
            let shift = n.sample(rng).round() as i64;
            if shift != 0 && l.data.contains(&lab) {
                grow(&mut l, lab, shift.unsigned_abs() as usize, shift < 0);
            }
        }
    }
    if noise.depth_a > 0.0 {
        let sd = noise.depth_a.sqrt();
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        for v in d.data.iter_mut() {
            if *v > 0.0 {
                let z: f64 = n.sample(rng);
                *v = (*v + z * sd * *v).max(NEAR);
            }
        }
    }
    (l, d)
}

/// Binary PPM (P6) of the label palette.
pub fn write_ppm<W: Write>(out: &mut W, labels: &LabelImage) -> io::Result<()> {
    write!(out, "P6\n{} {}\n255\n", labels.width, labels.height)?;
    let mut buf = Vec::with_capacity(labels.data.len() * 3);
    for l in &labels.data {
        buf.extend_from_slice(&l.rgb());
    }
    out.write_all(&buf)
}

/// 16-bit binary PGM (P5) of depth in millimeters, big-endian.
pub fn write_pgm16<W: Write>(out: &mut W, depth: &DepthImage) -> io::Result<()> {
    write!(out, "P5\n{} {}\n65535\n", depth.width, depth.height)?;
    let mut buf = Vec::with_capacity(depth.data.len() * 2);
    for d in &depth.data {
        let mm = (d * 1000.0).round().clamp(0.0, 65535.0) as u16;
        buf.extend_from_slice(&mm.to_be_bytes());
    }
    out.write_all(&buf)
}
