//! Planar geometry shared by the world model and the skill layer.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wrap an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// A planar pose in the shared global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn at(x: f64, y: f64) -> Self {
        Self::new(x, y, 0.0)
    }

    pub fn distance(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }

    /// Heading pointing from `self` towards `other`, or the current heading
    /// when the two points coincide.
    pub fn bearing_to(&self, other: &Pose2D) -> f64 {
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        if dx.abs() < 1e-12 && dy.abs() < 1e-12 {
            self.heading
        } else {
            dy.atan2(dx)
        }
    }

    /// Point at fraction `t` of the segment `self -> other`.
    pub fn lerp(&self, other: &Pose2D, t: f64) -> Pose2D {
        Pose2D::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
            self.bearing_to(other),
        )
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub cx: f64,
    pub cy: f64,
    pub hx: f64,
    pub hy: f64,
}

impl Rect {
    pub fn new(cx: f64, cy: f64, hx: f64, hy: f64) -> Self {
        Self { cx, cy, hx, hy }
    }

    /// Euclidean distance from a point to the rectangle (0 inside).
    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        let dx = ((x - self.cx).abs() - self.hx).max(0.0);
        let dy = ((y - self.cy).abs() - self.hy).max(0.0);
        dx.hypot(dy)
    }

    /// True when the point lies strictly closer than `margin` to the
    /// rectangle, or inside it.
    pub fn intrudes(&self, x: f64, y: f64, margin: f64) -> bool {
        let inside = (x - self.cx).abs() < self.hx && (y - self.cy).abs() < self.hy;
        inside || self.distance_to(x, y) < margin
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        (self.cx - other.cx).abs() < self.hx + other.hx
            && (self.cy - other.cy).abs() < self.hy + other.hy
    }
}

/// Rectangular workspace bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Contained with at least `margin` to every edge.
    pub fn contains_with_margin(&self, x: f64, y: f64, margin: f64) -> bool {
        x >= self.x_min + margin
            && x <= self.x_max - margin
            && y >= self.y_min + margin
            && y <= self.y_max - margin
    }
}

/// Static collision query over a set of rectangles inflated by a robot radius.
#[derive(Debug, Clone)]
pub struct CollisionMap {
    pub rects: Vec<Rect>,
    pub margin: f64,
    pub bounds: Bounds,
    pub resolution: f64,
}

impl CollisionMap {
    pub fn new(rects: Vec<Rect>, margin: f64, bounds: Bounds, resolution: f64) -> Self {
        Self {
            rects,
            margin,
            bounds,
            resolution,
        }
    }

    pub fn point_free(&self, x: f64, y: f64) -> bool {
        self.bounds.contains(x, y) && !self.rects.iter().any(|r| r.intrudes(x, y, self.margin))
    }

    /// Checks the segment at `resolution` spacing, endpoints included.
    pub fn segment_free(&self, ax: f64, ay: f64, bx: f64, by: f64) -> bool {
        let len = (bx - ax).hypot(by - ay);
        let n = (len / self.resolution).ceil().max(1.0) as usize;
        (0..=n).all(|i| {
            let t = i as f64 / n as f64;
            self.point_free(ax + (bx - ax) * t, ay + (by - ay) * t)
        })
    }
}

/// Resample a polyline at `count + 1` points equally spaced in arc length.
pub fn resample_by_fraction(points: &[(f64, f64)], count: usize) -> Vec<(f64, f64)> {
    if points.is_empty() {
        return Vec::new();
    }
    if points.len() == 1 || count == 0 {
        return vec![points[0]; count + 1];
    }
    let mut cumulative = Vec::with_capacity(points.len());
    cumulative.push(0.0);
    for w in points.windows(2) {
        let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        cumulative.push(cumulative.last().unwrap() + d);
    }
    let total = *cumulative.last().unwrap();
    if total <= 1e-12 {
        return vec![points[0]; count + 1];
    }
    let mut out = Vec::with_capacity(count + 1);
    let mut seg = 0;
    for i in 0..=count {
        let s = total * i as f64 / count as f64;
        while seg + 1 < cumulative.len() - 1 && cumulative[seg + 1] < s {
            seg += 1;
        }
        let span = cumulative[seg + 1] - cumulative[seg];
        let t = if span <= 1e-12 {
            0.0
        } else {
            ((s - cumulative[seg]) / span).clamp(0.0, 1.0)
        };
        let (a, b) = (points[seg], points[seg + 1]);
        out.push((a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t));
    }
    out
}
