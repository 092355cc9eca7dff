//! Planar primitives shared by the planner and the tracker.
//!
//! Everything here is a pure function over small `Copy` values. Boundary
//! handling follows one rule throughout: touching a polygon boundary is
//! allowed, only crossings of the open interior count as blocking.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default geometric tolerance in meters.
pub const DEFAULT_EPS: f64 = 1e-9;

/// Minimum segment length accepted by [`Segment2::new`].
pub const MIN_SEGMENT_LENGTH: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite coordinate ({x}, {y})")]
    NonFinite { x: f64, y: f64 },
    #[error("degenerate segment: endpoints closer than {MIN_SEGMENT_LENGTH} m")]
    DegenerateSegment,
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon is not convex and counter-clockwise at vertex {0}")]
    NotConvex(usize),
    #[error("zero-length direction vector")]
    ZeroVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Checked constructor rejecting NaN and infinities.
    pub fn try_new(x: f64, y: f64) -> Result<Self, GeometryError> {
        if x.is_finite() && y.is_finite() {
            Ok(Self { x, y })
        } else {
            Err(GeometryError::NonFinite { x, y })
        }
    }

    pub fn from_polar(radius: f64, angle: f64) -> Self {
        Self::new(radius * angle.cos(), radius * angle.sin())
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    pub fn normalized(self) -> Result<Self, GeometryError> {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            Ok(Self::new(self.x / n, self.y / n))
        } else {
            Err(GeometryError::ZeroVector)
        }
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn lerp(self, other: Self, s: f64) -> Self {
        self + (other - self) * s
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Point2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment2 {
    pub a: Point2,
    pub b: Point2,
}

impl Segment2 {
    pub fn new(a: Point2, b: Point2) -> Result<Self, GeometryError> {
        for p in [a, b] {
            if !p.is_finite() {
                return Err(GeometryError::NonFinite { x: p.x, y: p.y });
            }
        }
        if a.distance(b) <= MIN_SEGMENT_LENGTH {
            return Err(GeometryError::DegenerateSegment);
        }
        Ok(Self { a, b })
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    pub fn direction(&self) -> Point2 {
        self.b - self.a
    }

    pub fn at(&self, t: f64) -> Point2 {
        self.a.lerp(self.b, t)
    }

    /// Euclidean distance from `p` to the closed segment.
    pub fn distance_to(&self, p: Point2) -> f64 {
        point_segment_distance(p, self.a, self.b)
    }
}

/// Distance from `p` to the closed segment `a`-`b`; tolerates `a == b`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let d = b - a;
    let len2 = d.dot(d);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(d) / len2).clamp(0.0, 1.0);
    p.distance(a + d * t)
}

/// Convex polygon with counter-clockwise vertex order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polygon2 {
    vertices: Vec<Point2>,
}

impl Polygon2 {
    pub fn new(vertices: Vec<Point2>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite { x: p.x, y: p.y });
        }
        let n = vertices.len();
        let scale = vertices.iter().map(|p| p.norm()).fold(1.0, f64::max);
        let mut turn_sum = 0.0;
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            let e1 = b - a;
            let e2 = c - b;
            if e1.norm() <= MIN_SEGMENT_LENGTH {
                return Err(GeometryError::NotConvex(i));
            }
            if e1.cross(e2) < -1e-12 * scale * scale {
                return Err(GeometryError::NotConvex((i + 1) % n));
            }
            turn_sum += e1.cross(e2).atan2(e1.dot(e2));
        }
        // A locally convex chain that winds more than once is self-intersecting.
        if (turn_sum - 2.0 * PI).abs() > 1e-6 {
            return Err(GeometryError::NotConvex(0));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Signed distance of `p` to the nearest edge line, positive inside.
    /// For a convex polygon this is the inscribed depth of `p`.
    pub fn depth(&self, p: Point2) -> f64 {
        self.edges()
            .map(|(a, b)| {
                let e = b - a;
                e.cross(p - a) / e.norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn centroid(&self) -> Point2 {
        let n = self.vertices.len() as f64;
        let sum = self
            .vertices
            .iter()
            .fold(Point2::default(), |acc, &p| acc + p);
        sum * (1.0 / n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Containment {
    Inside,
    Boundary,
    Outside,
}

fn orientation(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

/// True iff the segments cross at a single point interior to both.
/// Touching at an endpoint, collinear overlap and parallel segments all
/// return false.
pub fn segments_properly_intersect(s1: &Segment2, s2: &Segment2) -> bool {
    proper_crossing(s1.a, s1.b, s2.a, s2.b)
}

pub(crate) fn proper_crossing(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let scale1 = (b - a).norm();
    let scale2 = (d - c).norm();
    let tol1 = 1e-12 * scale1 * scale2.max(1.0);
    let tol2 = 1e-12 * scale2 * scale1.max(1.0);
    let o1 = orientation(a, b, c);
    let o2 = orientation(a, b, d);
    let o3 = orientation(c, d, a);
    let o4 = orientation(c, d, b);
    let strictly_opposite =
        |u: f64, v: f64, tol: f64| (u > tol && v < -tol) || (u < -tol && v > tol);
    strictly_opposite(o1, o2, tol1) && strictly_opposite(o3, o4, tol2)
}

/// Closed-segment intersection test (touching counts).
pub(crate) fn segments_touch_or_cross(a: Point2, b: Point2, c: Point2, d: Point2, eps: f64) -> bool {
    if proper_crossing(a, b, c, d) {
        return true;
    }
    point_segment_distance(c, a, b) <= eps
        || point_segment_distance(d, a, b) <= eps
        || point_segment_distance(a, c, d) <= eps
        || point_segment_distance(b, c, d) <= eps
}

/// Classifies `p` against a convex polygon with boundary tolerance `eps`.
pub fn point_in_polygon(p: Point2, poly: &Polygon2, eps: f64) -> Containment {
    let depth = poly.depth(p);
    if depth > eps {
        Containment::Inside
    } else if depth >= -eps {
        // Near an edge line but possibly beyond the edge's extent.
        let on_boundary = poly
            .edges()
            .any(|(a, b)| point_segment_distance(p, a, b) <= eps);
        if on_boundary {
            Containment::Boundary
        } else {
            Containment::Outside
        }
    } else {
        Containment::Outside
    }
}

/// True iff the segment passes through the open interior of `poly`.
///
/// The segment is clipped to the closed polygon (Cyrus-Beck); the clipped
/// piece blocks only if its midpoint lies deeper than `eps` inside. Pieces
/// running along an edge or touching a vertex have zero depth.
pub fn segment_blocked_by_polygon(s: &Segment2, poly: &Polygon2, eps: f64) -> bool {
    segment_points_blocked(s.a, s.b, poly, eps)
}

pub(crate) fn segment_points_blocked(a: Point2, b: Point2, poly: &Polygon2, eps: f64) -> bool {
    let d = b - a;
    let mut t_lo = 0.0_f64;
    let mut t_hi = 1.0_f64;
    for (v0, v1) in poly.edges() {
        let e = v1 - v0;
        let len = e.norm();
        // Inside when cross(e, p - v0) / len >= 0.
        let num = e.cross(a - v0) / len;
        let den = e.cross(d) / len;
        if den.abs() < 1e-300 {
            if num < 0.0 {
                return false;
            }
            continue;
        }
        let t = -num / den;
        if den > 0.0 {
            t_lo = t_lo.max(t);
        } else {
            t_hi = t_hi.min(t);
        }
        if t_lo > t_hi {
            return false;
        }
    }
    if (t_hi - t_lo) * d.norm() <= eps {
        return false;
    }
    let mid = a + d * (0.5 * (t_lo + t_hi));
    poly.depth(mid) > eps
}

/// Unsigned angle between two directions, in `[0, pi]`.
pub fn turn_angle(dir_in: Point2, dir_out: Point2) -> Result<f64, GeometryError> {
    let a = dir_in.normalized()?;
    let b = dir_out.normalized()?;
    Ok(a.cross(b).abs().atan2(a.dot(b)))
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}
