//! Planar geometry helpers shared by preprocessing, conflict detection and PET.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist2(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    pub fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(self, other: Point) -> Point {
        Point::new(self.x + other.x, self.y + other.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rotates counterclockwise by `angle` radians about the origin.
    pub fn rotate(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

/// Closest points between segments `p0-p1` and `q0-q1`.
///
/// Returns `(s, t, distance)` where `s` and `t` are the parameters in `[0, 1]`
/// along each segment. Degenerate (zero-length) segments are handled.
pub fn segment_closest(p0: Point, p1: Point, q0: Point, q1: Point) -> (f64, f64, f64) {
    let d1 = p1.sub(p0);
    let d2 = q1.sub(q0);
    let r = p0.sub(q0);
    let a = d1.dot(d1);
    let e = d2.dot(d2);
    let f = d2.dot(r);
    const EPS: f64 = 1e-18;

    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(d2);
            let denom = a * e - b * b;
            let mut s = if denom > EPS {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    let cp = p0.add(d1.scale(s));
    let cq = q0.add(d2.scale(t));
    (s, t, cp.dist(cq))
}

/// Distance from `p` to segment `a-b`.
pub fn point_segment_dist(p: Point, a: Point, b: Point) -> f64 {
    segment_closest(p, p, a, b).2
}

/// Parameter interval `[t0, t1] ⊂ [0, 1]` over which segment `a-b` lies inside
/// the closed disc, if any.
pub fn segment_disc_interval(a: Point, b: Point, center: Point, radius: f64) -> Option<(f64, f64)> {
    let d = b.sub(a);
    let f = a.sub(center);
    let qa = d.dot(d);
    let qb = 2.0 * f.dot(d);
    let qc = f.dot(f) - radius * radius;
    if qa <= 1e-18 {
        return (qc <= 0.0).then_some((0.0, 1.0));
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-qb - sq) / (2.0 * qa);
    let t1 = (-qb + sq) / (2.0 * qa);
    let lo = t0.max(0.0);
    let hi = t1.min(1.0);
    (lo <= hi).then_some((lo, hi))
}

/// Simple polygon given by its vertices in order (either orientation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon(pub Vec<Point>);

impl Polygon {
    /// Even-odd ray casting; points on the boundary may land either way.
    pub fn contains(&self, p: Point) -> bool {
        let v = &self.0;
        if v.len() < 3 {
            return false;
        }
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[j]);
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Rectangle around segment `a-b` extended by `margin` in every direction.
    pub fn inflated_segment(a: Point, b: Point, margin: f64) -> Polygon {
        let len = a.dist(b);
        let (u, n) = if len > 0.0 {
            let u = b.sub(a).scale(1.0 / len);
            (u, Point::new(-u.y, u.x))
        } else {
            (Point::new(1.0, 0.0), Point::new(0.0, 1.0))
        };
        let a2 = a.sub(u.scale(margin));
        let b2 = b.add(u.scale(margin));
        Polygon(vec![
            a2.add(n.scale(margin)),
            b2.add(n.scale(margin)),
            b2.sub(n.scale(margin)),
            a2.sub(n.scale(margin)),
        ])
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Absolute difference between two bearings, in `[0, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}
