//! Color-region detection of stacks, the footprint pattern and patches.

use nalgebra::{Point3, Vector2};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, ImagePoint, PinholeCamera};
use crate::render::{Label, LabelImage};
use crate::world::{polygon_area, BrickColor};

use super::components::{connected_components, connected_components_where, Region};
use super::hull::{convex_hull, min_area_rect, pixel_hull, point_in_convex, RotatedRect};
use super::pose::image_to_plane;
use super::tracker::ScoringWeights;
use super::VisionError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    /// Minimum stack area at 640x480; scaled with the pixel count.
    pub min_stack_area: f64,
    /// Same-color blobs closer than this (pixels, at 640 wide) form one stack.
    pub merge_px: f64,
    pub min_patch_area: f64,
    pub rect_min: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { min_stack_area: 400.0, merge_px: 24.0, min_patch_area: 30.0, rect_min: 0.85 }
    }
}

impl DetectConfig {
    fn area_scale(k: &CameraIntrinsics) -> f64 {
        (k.width as f64 * k.height as f64) / (640.0 * 480.0)
    }

    pub fn stack_area(&self, k: &CameraIntrinsics) -> f64 {
        self.min_stack_area * Self::area_scale(k)
    }

    pub fn patch_area(&self, k: &CameraIntrinsics) -> f64 {
        self.min_patch_area * Self::area_scale(k)
    }

    pub fn merge(&self, k: &CameraIntrinsics) -> f64 {
        self.merge_px * k.width as f64 / 640.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackObservation {
    pub color: BrickColor,
    /// Centroid (x_b, y_b).
    pub position: ImagePoint,
    pub area: f64,
    pub hull: Vec<Vector2<f64>>,
    pub pixels: Vec<(u32, u32)>,
}

fn bbox_gap(a: (u32, u32, u32, u32), b: (u32, u32, u32, u32)) -> f64 {
    let dx = (a.0 as i64 - b.2 as i64).max(b.0 as i64 - a.2 as i64).max(0) as f64;
    let dy = (a.1 as i64 - b.3 as i64).max(b.1 as i64 - a.3 as i64).max(0) as f64;
    dx.hypot(dy)
}

/// Stacks of one color, largest first. Brick faces and their patches count
/// as the stack; neighboring blobs within the merge distance are grouped.
pub fn detect_stacks(labels: &LabelImage, k: &CameraIntrinsics, color: BrickColor, cfg: &DetectConfig) -> Vec<StackObservation> {
    let target = Label::from_color(color);
    let regions: Vec<Region> = connected_components_where(labels, |l| l == target || l == Label::PatchGray)
        .into_iter()
        .filter(|r| r.pixels.iter().any(|&(c, row)| labels.get(c as usize, row as usize) == target))
        .collect();
    let n = regions.len();
    let boxes: Vec<_> = regions.iter().map(|r| r.bbox()).collect();
    let mut group: Vec<usize> = (0..n).collect();
    fn root(g: &mut [usize], mut i: usize) -> usize {
        while g[i] != i {
            g[i] = g[g[i]];
            i = g[i];
        }
        i
    }
    let merge = cfg.merge(k);
    for i in 0..n {
        for j in i + 1..n {
            if bbox_gap(boxes[i], boxes[j]) <= merge {
                let (a, b) = (root(&mut group, i), root(&mut group, j));
                if a != b {
                    group[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<(u32, u32)>> = Vec::new();
    let mut index = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut group, i);
        if index[r] == usize::MAX {
            index[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[index[r]].extend_from_slice(&regions[i].pixels);
    }
    let min_area = cfg.stack_area(k);
    let mut out: Vec<StackObservation> = clusters
        .into_iter()
        .filter(|px| px.len() as f64 >= min_area)
        .map(|pixels| {
            let reg = Region { pixels };
            StackObservation {
                color,
                position: reg.centroid(k),
                area: reg.area() as f64,
                hull: pixel_hull(&reg.pixels, k.cx, k.cy),
                pixels: reg.pixels,
            }
        })
        .collect();
    out.sort_by(|a, b| b.area.total_cmp(&a.area));
    out
}

/// Pattern pixel with the largest image x (ties: smallest y), as
/// (signed point, column, row).
pub fn detect_footprint(labels: &LabelImage, k: &CameraIntrinsics) -> Result<(ImagePoint, u32, u32), VisionError> {
    let mut best: Option<(u32, u32)> = None;
    for row in 0..labels.height {
        for col in (0..labels.width).rev() {
            if labels.get(col, row).is_pattern() {
                let (c, r) = (col as u32, row as u32);
                if best.is_none_or(|(bc, _)| c > bc) {
                    best = Some((c, r));
                }
                break;
            }
        }
    }
    let (c, r) = best.ok_or(VisionError::NotVisible)?;
    Ok((k.pixel_center(c, r), c, r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchCandidate {
    pub id: u64,
    /// Rectangle center (x_p, y_p).
    pub position: ImagePoint,
    /// Pixel count A_i.
    pub area: f64,
    pub rect: RotatedRect,
    pub p1: ImagePoint,
    pub p2: ImagePoint,
    pub pixels: Vec<(u32, u32)>,
}

impl PatchCandidate {
    pub fn rectangularity(&self) -> f64 {
        self.area / self.rect.area()
    }
}

/// Rectangle-like patch regions whose centroid lies inside the stack hull.
pub fn extract_patch_candidates(labels: &LabelImage, k: &CameraIntrinsics, stack_hull: &[Vector2<f64>], cfg: &DetectConfig) -> Vec<PatchCandidate> {
    candidates(labels, k, stack_hull, cfg, |reg, rect| {
        let (p1, p2) = rect.endpoints();
        Some((reg.area() as f64 / rect.area(), p1, p2))
    })
}

/// Same, but the shape is judged on the ground plane seen through `cam`
/// (base frame), where perspective shear disappears. Projections onto
/// horizontal planes are similar to each other, so the ground stands in for
/// the unknown patch height.
pub fn extract_patch_candidates_rectified(labels: &LabelImage, cam: &PinholeCamera, stack_hull: &[Vector2<f64>], cfg: &DetectConfig) -> Vec<PatchCandidate> {
    let k = cam.intrinsics;
    candidates(labels, &k, stack_hull, cfg, |reg, _| {
        let img = corner_hull(&reg.pixels, k.cx, k.cy);
        let fill = reg.area() as f64 / polygon_area(&img);
        let ground: Vec<Vector2<f64>> = img.iter().map(|p| image_to_plane(ImagePoint::new(p.x, p.y), cam, 0.0).ok()).collect::<Option<_>>()?;
        let ground = convex_hull(&ground);
        let rect = min_area_rect(&ground).ok()?;
        let (a, b) = rect.endpoints();
        let p1 = cam.project(&Point3::new(a.x, a.y, 0.0))?;
        let p2 = cam.project(&Point3::new(b.x, b.y, 0.0))?;
        Some((fill * polygon_area(&ground) / rect.area(), p1, p2))
    })
}

/// Hull of the pixel squares (not their centers) of a region.
fn corner_hull(pixels: &[(u32, u32)], cx: f64, cy: f64) -> Vec<Vector2<f64>> {
    let centers = pixel_hull(pixels, cx, cy);
    let mut pts = Vec::with_capacity(centers.len() * 4);
    for p in centers {
        for (dx, dy) in [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)] {
            pts.push(Vector2::new(p.x + dx, p.y + dy));
        }
    }
    convex_hull(&pts)
}

fn candidates(
    labels: &LabelImage,
    k: &CameraIntrinsics,
    stack_hull: &[Vector2<f64>],
    cfg: &DetectConfig,
    shape: impl Fn(&Region, &RotatedRect) -> Option<(f64, ImagePoint, ImagePoint)>,
) -> Vec<PatchCandidate> {
    let min_area = cfg.patch_area(k);
    let mut out = Vec::new();
    for reg in connected_components(labels, Label::PatchGray) {
        if (reg.area() as f64) < min_area || reg.touches_border(labels.width, labels.height) {
            continue;
        }
        let c = reg.centroid(k);
        if !point_in_convex(stack_hull, &Vector2::new(c.x, c.y)) {
            continue;
        }
        let hull = pixel_hull(&reg.pixels, k.cx, k.cy);
        let Ok(mut rect) = min_area_rect(&hull) else { continue };
        // pixel centers span one pixel less than the pixels themselves
        rect.length += 1.0;
        rect.width += 1.0;
        let Some((rectangularity, p1, p2)) = shape(&reg, &rect) else { continue };
        if rectangularity < cfg.rect_min {
            continue;
        }
        out.push(PatchCandidate {
            id: 0,
            position: ImagePoint::new(rect.center.x, rect.center.y),
            area: reg.area() as f64,
            rect,
            p1,
            p2,
            pixels: reg.pixels,
        });
    }
    out
}

pub fn score(c: &PatchCandidate, w: &ScoringWeights) -> f64 {
    -w.w_x * c.position.x.abs() + w.w_y * c.position.y + w.w_a * c.area
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{optical_in_effector, PinholeCamera, RigidPose};
    use crate::render::{render_rgbd, Image, PatternMarking, Scene};
    use crate::world::{BrickBox, WallFootprint};
    use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
    use std::f64::consts::FRAC_PI_2;

    fn nadir(x: f64, y: f64, z: f64) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::new(x, y, z), UnitQuaternion::from_euler_angles(0.0, FRAC_PI_2, 0.0) * optical_in_effector())
    }

    fn brick(color: BrickColor, x: f64, y: f64, yaw: f64) -> BrickBox {
        BrickBox {
            color,
            center: Vector3::new(x, y, 0.1),
            yaw,
            half: Vector3::new(0.15, 0.1, 0.1),
            patch_half: Vector2::new(0.075, 0.05),
            show_patch: true,
        }
    }

    fn cand(x: f64, y: f64, area: f64) -> PatchCandidate {
        let rect = RotatedRect { center: Vector2::new(x, y), length: 20.0, width: 10.0, angle: 0.0 };
        let (p1, p2) = rect.endpoints();
        PatchCandidate { id: 0, position: ImagePoint::new(x, y), area, rect, p1, p2, pixels: vec![] }
    }

    #[test]
    fn score_examples() {
        let zero = ScoringWeights { w_x: 0.0, w_y: 0.0, w_a: 0.0, ..Default::default() };
        assert_eq!(score(&cand(10.0, 20.0, 300.0), &zero), 0.0);
        let w = ScoringWeights { w_x: 1.0, w_y: 2.0, w_a: 0.01, ..Default::default() };
        assert!((score(&cand(10.0, 20.0, 300.0), &w) - 33.0).abs() < 1e-12);
        assert_eq!(score(&cand(-10.0, 20.0, 300.0), &w), score(&cand(10.0, 20.0, 300.0), &w));
    }

    #[test]
    fn centered_stack() {
        let k = CameraIntrinsics::realsense_like();
        let scene = Scene { boxes: vec![brick(BrickColor::Red, 0.0, 0.0, 0.0)], pattern: None };
        let (l, _) = render_rgbd(&scene, &nadir(0.0, 0.0, 2.0), &k);
        let obs = detect_stacks(&l, &k, BrickColor::Red, &DetectConfig::default());
        assert_eq!(obs.len(), 1);
        assert!(obs[0].position.x.abs() <= 2.0 && obs[0].position.y.abs() <= 2.0);
    }

    #[test]
    fn stacks_sorted_and_thresholded() {
        let k = CameraIntrinsics::realsense_like();
        let mut l = Image::filled(640, 480, Label::Ground);
        let mut paint = |c0: usize, r0: usize, s: usize| {
            for r in r0..r0 + s {
                for c in c0..c0 + s {
                    l.set(c, r, Label::Red);
                }
            }
        };
        paint(50, 50, 20); // 400
        paint(300, 300, 30); // 900
        paint(500, 100, 10); // 100, below threshold
        let obs = detect_stacks(&l, &k, BrickColor::Red, &DetectConfig::default());
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[0].area, 900.0);
        assert_eq!(obs[1].area, 400.0);
    }

    #[test]
    fn footprint_rightmost_point() {
        let k = CameraIntrinsics::realsense_like();
        let mut l = Image::filled(640, 480, Label::Ground);
        assert_eq!(detect_footprint(&l, &k), Err(VisionError::NotVisible));
        l.set(100, 50, Label::PatternYellow);
        l.set(300, 80, Label::PatternMagenta);
        l.set(300, 40, Label::PatternYellow);
        let (_, c, r) = detect_footprint(&l, &k).unwrap();
        assert_eq!((c, r), (300, 40));
    }

    #[test]
    fn footprint_x_is_maximum_over_pattern() {
        use rand::{Rng, SeedableRng};
        let k = CameraIntrinsics::new(20.0, 1.0, 24, 16).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mut l = Image::filled(24, 16, Label::Ground);
            for v in l.data.iter_mut() {
                let x: f64 = rng.random();
                *v = if x < 0.05 { Label::PatternYellow } else if x < 0.1 { Label::PatternMagenta } else { Label::Ground };
            }
            let exhaustive = (0..16)
                .flat_map(|r| (0..24).map(move |c| (c, r)))
                .filter(|&(c, r)| l.get(c, r).is_pattern())
                .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
            match (exhaustive, detect_footprint(&l, &k)) {
                (None, Err(VisionError::NotVisible)) => {}
                (Some((c, r)), Ok((_, c2, r2))) => assert_eq!((c as u32, r as u32), (c2, r2)),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn footprint_corner_matches_projection() {
        let k = CameraIntrinsics::realsense_like();
        // oblique camera facing +x; pattern ahead and to the left, right end in view
        let fp = WallFootprint {
            corner: RigidPose::planar(2.0, -0.3, std::f64::consts::FRAC_PI_2 + 0.4),
            length: 1.0,
            width: 0.4,
            blueprint: vec![],
        };
        let cam_pose = RigidPose::new(0.0, 0.0, 1.2, 0.0, 0.5, 0.0).to_isometry() * Isometry3::from_parts(Translation3::identity(), optical_in_effector());
        let scene = Scene { boxes: vec![], pattern: Some(PatternMarking { footprint: fp.clone(), stripe: 0.25 }) };
        let (l, _) = render_rgbd(&scene, &cam_pose, &k);
        let (p, _, _) = detect_footprint(&l, &k).unwrap();
        // rightmost visible corner: the corner with the largest projected x
        let pin = PinholeCamera::new(k, cam_pose);
        let best = fp
            .polygon()
            .iter()
            .filter_map(|c| pin.project(&Point3::new(c.x, c.y, 0.0)))
            .max_by(|a, b| a.x.total_cmp(&b.x))
            .unwrap();
        assert!((p.x - best.x).abs() <= 2.0 && (p.y - best.y).abs() <= 2.0, "{p:?} vs {best:?}");
    }

    #[test]
    fn single_patch_candidate() {
        let k = CameraIntrinsics::realsense_like();
        let cam = nadir(0.05, -0.03, 1.5);
        let b = brick(BrickColor::Red, 0.0, 0.0, 0.4);
        let (l, _) = render_rgbd(&Scene { boxes: vec![b], pattern: None }, &cam, &k);
        let stacks = detect_stacks(&l, &k, BrickColor::Red, &DetectConfig::default());
        let cands = extract_patch_candidates(&l, &k, &stacks[0].hull, &DetectConfig::default());
        assert_eq!(cands.len(), 1);
        let truth = PinholeCamera::new(k, cam).project(&Point3::new(0.0, 0.0, 0.2)).unwrap();
        assert!((cands[0].position.x - truth.x).abs() <= 2.0 && (cands[0].position.y - truth.y).abs() <= 2.0);
        assert!(cands[0].rectangularity() >= 0.85);
    }

    #[test]
    fn oblique_patch_passes_only_when_rectified() {
        use crate::geometry::axis_angle_diff;
        use crate::vision::pose::image_to_plane;
        use crate::world::{CameraMount, EffectorPose};
        let k = CameraIntrinsics::realsense_like();
        let e = EffectorPose { x: -1.3, y: 0.0, z: 1.2, pitch: 0.6, yaw: 0.0 };
        let cam = CameraMount::default().camera_in_base(&e);
        let b = brick(BrickColor::Red, 0.0, 0.0, 0.6);
        let (l, _) = render_rgbd(&Scene { boxes: vec![b], pattern: None }, &cam, &k);
        let cfg = DetectConfig::default();
        let stacks = detect_stacks(&l, &k, BrickColor::Red, &cfg);
        assert!(extract_patch_candidates(&l, &k, &stacks[0].hull, &cfg).is_empty());
        let pc = PinholeCamera::new(k, cam);
        let cands = extract_patch_candidates_rectified(&l, &pc, &stacks[0].hull, &cfg);
        assert_eq!(cands.len(), 1);
        let a = image_to_plane(cands[0].p1, &pc, 0.2).unwrap();
        let c = image_to_plane(cands[0].p2, &pc, 0.2).unwrap();
        let yaw = (c.y - a.y).atan2(c.x - a.x);
        assert!(axis_angle_diff(yaw, 0.6).abs() < 2f64.to_radians(), "{yaw}");
    }

    #[test]
    fn patch_outside_hull_is_excluded() {
        let k = CameraIntrinsics::realsense_like();
        let (l, _) = render_rgbd(&Scene { boxes: vec![brick(BrickColor::Red, 0.0, 0.0, 0.0)], pattern: None }, &nadir(0.0, 0.0, 1.5), &k);
        let far_hull = vec![Vector2::new(200.0, 200.0), Vector2::new(250.0, 200.0), Vector2::new(250.0, 230.0)];
        assert!(extract_patch_candidates(&l, &k, &far_hull, &DetectConfig::default()).is_empty());
    }

    #[test]
    fn square_region_axis_tie() {
        let k = CameraIntrinsics::realsense_like();
        let mut l = Image::filled(640, 480, Label::Red);
        for r in 200..240 {
            for c in 300..340 {
                l.set(c, r, Label::PatchGray);
            }
        }
        let hull = vec![Vector2::new(-300.0, -200.0), Vector2::new(300.0, -200.0), Vector2::new(300.0, 200.0), Vector2::new(-300.0, 200.0)];
        let c = extract_patch_candidates(&l, &k, &hull, &DetectConfig::default());
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].rect.angle, 0.0);
        assert!((c[0].rectangularity() - 1.0).abs() < 1e-9);
    }
}
