//! Shortest forward paths of bounded curvature between planar poses.

use std::f64::consts::TAU;

use crate::geometry::RigidPose;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Steer {
    Left,
    Straight,
    Right,
}

impl Steer {
    pub fn curvature_sign(self) -> f64 {
        match self {
            Steer::Left => 1.0,
            Steer::Straight => 0.0,
            Steer::Right => -1.0,
        }
    }
}

/// Three pieces with lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DubinsPath {
    pub steer: [Steer; 3],
    pub lengths: [f64; 3],
    pub radius: f64,
}

impl DubinsPath {
    pub fn length(&self) -> f64 {
        self.lengths.iter().sum()
    }

    /// Pose after travelling `s` meters along the path.
    pub fn sample(&self, start: &RigidPose, s: f64) -> RigidPose {
        let (mut x, mut y, mut th) = (start.x, start.y, start.yaw);
        let mut rem = s;
        for (st, &len) in self.steer.iter().zip(&self.lengths) {
            let l = rem.min(len);
            (x, y, th) = advance(x, y, th, st.curvature_sign() / self.radius, l);
            rem -= l;
            if rem <= 0.0 {
                break;
            }
        }
        RigidPose::planar(x, y, th)
    }
}

/// Exact motion along an arc of curvature `k` for arc length `s`.
pub fn advance(x: f64, y: f64, th: f64, k: f64, s: f64) -> (f64, f64, f64) {
    if k.abs() < 1e-12 {
        return (x + s * th.cos(), y + s * th.sin(), th);
    }
    let th2 = th + k * s;
    (x + (th2.sin() - th.sin()) / k, y - (th2.cos() - th.cos()) / k, th2)
}

fn m2pi(a: f64) -> f64 {
    a.rem_euclid(TAU)
}

/// Shortest of the six Dubins words, `None` only for degenerate radius.
pub fn shortest(start: &RigidPose, goal: &RigidPose, radius: f64) -> Option<DubinsPath> {
    if radius <= 0.0 {
        return None;
    }
    let dx = goal.x - start.x;
    let dy = goal.y - start.y;
    let d = dx.hypot(dy) / radius;
    let phi = dy.atan2(dx);
    let a = m2pi(start.yaw - phi);
    let b = m2pi(goal.yaw - phi);
    let (sa, ca, sb, cb) = (a.sin(), a.cos(), b.sin(), b.cos());
    let cab = (a - b).cos();
    use Steer::*;
    let mut cands: Vec<([Steer; 3], [f64; 3])> = Vec::with_capacity(6);

    let p2 = 2.0 + d * d - 2.0 * cab + 2.0 * d * (sa - sb);
    if p2 >= 0.0 {
        let tmp = (cb - ca).atan2(d + sa - sb);
        cands.push(([Left, Straight, Left], [m2pi(-a + tmp), p2.sqrt(), m2pi(b - tmp)]));
    }
    let p2 = 2.0 + d * d - 2.0 * cab + 2.0 * d * (sb - sa);
    if p2 >= 0.0 {
        let tmp = (ca - cb).atan2(d - sa + sb);
        cands.push(([Right, Straight, Right], [m2pi(a - tmp), p2.sqrt(), m2pi(-b + tmp)]));
    }
    let p2 = -2.0 + d * d + 2.0 * cab + 2.0 * d * (sa + sb);
    if p2 >= 0.0 {
        let p = p2.sqrt();
        let tmp = (-ca - cb).atan2(d + sa + sb) - (-2.0f64).atan2(p);
        cands.push(([Left, Straight, Right], [m2pi(-a + tmp), p, m2pi(-m2pi(b) + tmp)]));
    }
    let p2 = d * d - 2.0 + 2.0 * cab - 2.0 * d * (sa + sb);
    if p2 >= 0.0 {
        let p = p2.sqrt();
        let tmp = (ca + cb).atan2(d - sa - sb) - 2.0f64.atan2(p);
        cands.push(([Right, Straight, Left], [m2pi(a - tmp), p, m2pi(b - tmp)]));
    }
    let t = (6.0 - d * d + 2.0 * cab + 2.0 * d * (sa - sb)) / 8.0;
    if t.abs() <= 1.0 {
        let p = m2pi(TAU - t.acos());
        let tt = m2pi(a - (ca - cb).atan2(d - sa + sb) + p / 2.0);
        cands.push(([Right, Left, Right], [tt, p, m2pi(a - b - tt + p)]));
    }
    let t = (6.0 - d * d + 2.0 * cab + 2.0 * d * (sb - sa)) / 8.0;
    if t.abs() <= 1.0 {
        let p = m2pi(TAU - t.acos());
        let tt = m2pi(-a - (ca - cb).atan2(d + sa - sb) + p / 2.0);
        cands.push(([Left, Right, Left], [tt, p, m2pi(m2pi(b) - a - tt + p)]));
    }
    cands
        .into_iter()
        .map(|(steer, l)| {
            // Full turns from numerical wrap are dropped.
            let fix = |v: f64| if v > TAU - 1e-9 { 0.0 } else { v };
            DubinsPath { steer, lengths: [fix(l[0]) * radius, l[1] * radius, fix(l[2]) * radius], radius }
        })
        .min_by(|x, y| x.length().total_cmp(&y.length()))
        .filter(|p| p.length().is_finite())
}
