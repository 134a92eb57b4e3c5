//! Convex hull (monotone chain) and minimum-area enclosing rectangle.

use std::f64::consts::PI;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::geometry::{axis_angle, ImagePoint};

use super::VisionError;

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a - o).perp(&(b - o))
}

/// Counter-clockwise hull without collinear vertices. One or two distinct
/// input points give a degenerate hull of that many points.
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Vector2<f64>> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Vector2<f64>> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Hull of pixel centers of a region, in signed image coordinates. Only the
/// extreme pixels of each row can be hull vertices.
pub fn pixel_hull(pixels: &[(u32, u32)], cx: f64, cy: f64) -> Vec<Vector2<f64>> {
    use std::collections::BTreeMap;
    let mut rows: BTreeMap<u32, (u32, u32)> = BTreeMap::new();
    for &(c, r) in pixels {
        let e = rows.entry(r).or_insert((c, c));
        e.0 = e.0.min(c);
        e.1 = e.1.max(c);
    }
    let mut pts = Vec::with_capacity(rows.len() * 2);
    for (r, (a, b)) in rows {
        let y = r as f64 + 0.5 - cy;
        pts.push(Vector2::new(a as f64 + 0.5 - cx, y));
        if b != a {
            pts.push(Vector2::new(b as f64 + 0.5 - cx, y));
        }
    }
    convex_hull(&pts)
}

pub fn point_in_convex(hull: &[Vector2<f64>], p: &Vector2<f64>) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| cross(&hull[i], &hull[(i + 1) % hull.len()], p) >= -1e-9)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedRect {
    pub center: Vector2<f64>,
    /// Extent along the major axis.
    pub length: f64,
    /// Extent along the minor axis.
    pub width: f64,
    /// Major-axis angle in (-pi/2, pi/2].
    pub angle: f64,
}

impl RotatedRect {
    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    pub fn axis(&self) -> Vector2<f64> {
        Vector2::new(self.angle.cos(), self.angle.sin())
    }

    /// Major-axis endpoints `center -/+ length/2 * axis`.
    pub fn endpoints(&self) -> (ImagePoint, ImagePoint) {
        let a = self.axis() * (self.length / 2.0);
        let p1 = self.center - a;
        let p2 = self.center + a;
        (ImagePoint::new(p1.x, p1.y), ImagePoint::new(p2.x, p2.y))
    }
}

/// Extents of the points along direction `theta` and its normal:
/// (min_u, max_u, min_v, max_v).
pub fn extents(points: &[Vector2<f64>], theta: f64) -> (f64, f64, f64, f64) {
    let (s, c) = theta.sin_cos();
    let mut e = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        let u = c * p.x + s * p.y;
        let v = -s * p.x + c * p.y;
        e.0 = e.0.min(u);
        e.1 = e.1.max(u);
        e.2 = e.2.min(v);
        e.3 = e.3.max(v);
    }
    e
}

fn rect_at(points: &[Vector2<f64>], theta: f64) -> RotatedRect {
    let (u0, u1, v0, v1) = extents(points, theta);
    let (s, c) = theta.sin_cos();
    let (um, vm) = ((u0 + u1) / 2.0, (v0 + v1) / 2.0);
    let center = Vector2::new(c * um - s * vm, s * um + c * vm);
    let (a, b) = (u1 - u0, v1 - v0);
    let tie = (a - b).abs() <= 1e-9 * a.max(b);
    let (length, width, angle) = if tie {
        // square: prefer the axis closest to image x
        let t1 = axis_angle(theta);
        let t2 = axis_angle(theta + PI / 2.0);
        (a, b, if t1.abs() <= t2.abs() { t1 } else { t2 })
    } else if a > b {
        (a, b, axis_angle(theta))
    } else {
        (b, a, axis_angle(theta + PI / 2.0))
    };
    RotatedRect { center, length, width, angle }
}

/// Minimum-area enclosing rectangle of a convex hull. The optimum has a side
/// collinear with a hull edge, so only edge directions are tried.
pub fn min_area_rect(hull: &[Vector2<f64>]) -> Result<RotatedRect, VisionError> {
    if hull.len() < 3 {
        return Err(VisionError::DegenerateHull);
    }
    let mut best: Option<(f64, f64)> = None;
    for i in 0..hull.len() {
        let e = hull[(i + 1) % hull.len()] - hull[i];
        if e.norm() < 1e-12 {
            continue;
        }
        let theta = e.y.atan2(e.x);
        let (u0, u1, v0, v1) = extents(hull, theta);
        let area = (u1 - u0) * (v1 - v0);
        if best.is_none_or(|(a, _)| area < a * (1.0 - 1e-12)) {
            best = Some((area, theta));
        }
    }
    let (area, theta) = best.ok_or(VisionError::DegenerateHull)?;
    if area <= 1e-12 {
        return Err(VisionError::DegenerateHull);
    }
    Ok(rect_at(hull, theta))
}
