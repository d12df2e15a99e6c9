//! Planar geometry shared by the vehicle model, rasterizer and event checks.

use std::f64::consts::PI;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

pub type Vec2 = Vector2<f64>;

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

/// Signed smallest difference `a - b`, wrapped.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

pub fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Express a world point in the frame anchored at `origin` with x along `heading`.
pub fn world_to_local(p: Vec2, origin: Vec2, heading: f64) -> Vec2 {
    rotate(p - origin, -heading)
}

pub fn local_to_world(p: Vec2, origin: Vec2, heading: f64) -> Vec2 {
    origin + rotate(p, heading)
}

/// Rectangle with a center, heading of its length axis, and full extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Self {
            center,
            heading,
            length,
            width,
        }
    }

    /// Unit vectors along the length and width axes.
    pub fn axes(&self) -> [Vec2; 2] {
        let (s, c) = self.heading.sin_cos();
        [Vec2::new(c, s), Vec2::new(-s, c)]
    }

    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let [u, n] = self.axes();
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        [
            self.center + u * hl + n * hw,
            self.center - u * hl + n * hw,
            self.center - u * hl - n * hw,
            self.center + u * hl - n * hw,
        ]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let [u, n] = self.axes();
        let d = p - self.center;
        d.dot(&u).abs() <= 0.5 * self.length && d.dot(&n).abs() <= 0.5 * self.width
    }

    /// Separating-axis test. Boxes that only touch count as intersecting.
    pub fn intersects(&self, other: &OrientedBox) -> bool {
        let a = self.corners();
        let b = other.corners();
        let axes = self.axes().into_iter().chain(other.axes());
        for axis in axes {
            let (amin, amax) = project(&a, axis);
            let (bmin, bmax) = project(&b, axis);
            if amax < bmin || bmax < amin {
                return false;
            }
        }
        true
    }
}

fn project(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    corners
        .iter()
        .map(|c| c.dot(&axis))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Distance from `p` to a polyline; a single point is treated as a degenerate polyline.
/// Returns `None` for an empty polyline.
pub fn point_polyline_distance(p: Vec2, polyline: &[Vec2]) -> Option<f64> {
    match polyline {
        [] => None,
        [only] => Some((p - only).norm()),
        _ => polyline
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .reduce(f64::min),
    }
}

/// Even-odd point-in-polygon; the polygon is implicitly closed.
pub fn point_in_polygon(p: Vec2, polygon: &[Vec2]) -> bool {
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (polygon[i], polygon[j]);
        if (pi.y > p.y) != (pj.y > p.y) {
            let x_cross = pj.x + (p.y - pj.y) * (pi.x - pj.x) / (pi.y - pj.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}
