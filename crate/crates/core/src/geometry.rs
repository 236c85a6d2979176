//! Planar geometry kernel: convex hulls, convex clipping, areas and containment.
//!
//! Everything is double precision with explicit tolerances. Inputs are
//! meter-scale table coordinates, so the tolerances below are far under the
//! millimeter resolution that scene and metric checks care about.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points closer than this (per coordinate) are treated as duplicates.
pub const DEDUP_EPS: f64 = 1e-12;
/// Areas below this are treated as empty.
pub const AREA_EPS: f64 = 1e-12;
/// Tolerance for orientation and boundary comparisons.
pub const CMP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("polygon is not convex")]
    NonConvexInput,
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

    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(p: [f64; 2]) -> Self {
        Point2::new(p[0], p[1])
    }
}

impl From<(f64, f64)> for Point2 {
    fn from(p: (f64, f64)) -> Self {
        Point2::new(p.0, p.1)
    }
}

/// Twice the signed area of triangle (o, a, b); positive when counter-clockwise.
pub fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    let u = a.sub(o);
    let v = b.sub(o);
    u.x * v.y - u.y * v.x
}

/// A simple polygon with counter-clockwise vertex order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point2>", into = "Vec<Point2>")]
pub struct Polygon2D {
    vertices: Vec<Point2>,
}

impl Polygon2D {
    /// Builds a polygon, reversing clockwise input so the stored order is CCW.
    pub fn new(mut vertices: Vec<Point2>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::DegenerateInput(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        let signed = signed_area(&vertices);
        if signed.abs() < AREA_EPS {
            return Err(GeometryError::DegenerateInput("polygon has zero area".into()));
        }
        if signed < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
    pub fn rectangle(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self, GeometryError> {
        Self::new(vec![
            Point2::new(x_min, y_min),
            Point2::new(x_max, y_min),
            Point2::new(x_max, y_max),
            Point2::new(x_min, y_max),
        ])
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

    fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// True when every turn is a left turn (collinear runs tolerated).
    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        let scale = self.scale();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            cross(a, b, c) >= -CMP_EPS * scale * scale
        })
    }

    fn scale(&self) -> f64 {
        self.vertices
            .iter()
            .fold(1.0_f64, |m, p| m.max(p.x.abs()).max(p.y.abs()))
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Polygon2D {
        Polygon2D {
            vertices: self.vertices.iter().map(|p| Point2::new(p.x + dx, p.y + dy)).collect(),
        }
    }

    /// Rotates about the origin by `angle` radians.
    pub fn rotate(&self, angle: f64) -> Polygon2D {
        let (s, c) = angle.sin_cos();
        Polygon2D {
            vertices: self
                .vertices
                .iter()
                .map(|p| Point2::new(c * p.x - s * p.y, s * p.x + c * p.y))
                .collect(),
        }
    }

    pub fn bounding_box(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }
}

impl TryFrom<Vec<Point2>> for Polygon2D {
    type Error = GeometryError;

    fn try_from(v: Vec<Point2>) -> Result<Self, Self::Error> {
        Polygon2D::new(v)
    }
}

impl From<Polygon2D> for Vec<Point2> {
    fn from(p: Polygon2D) -> Self {
        p.vertices
    }
}

fn signed_area(vertices: &[Point2]) -> f64 {
    let n = vertices.len();
    let mut twice = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        twice += a.x * b.y - b.x * a.y;
    }
    twice / 2.0
}

/// Shoelace area (absolute value).
pub fn area(p: &Polygon2D) -> f64 {
    signed_area(&p.vertices).abs()
}

/// Convex hull in CCW order, starting at the lexicographically smallest vertex.
///
/// Monotone chain. Near-duplicate points are merged and collinear boundary
/// points are dropped.
pub fn hull_2d(points: &[Point2]) -> Result<Polygon2D, GeometryError> {
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(GeometryError::DegenerateInput("non-finite coordinate".into()));
    }
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|b, a| (a.x - b.x).abs() <= DEDUP_EPS && (a.y - b.y).abs() <= DEDUP_EPS);
    if pts.len() < 3 {
        return Err(GeometryError::DegenerateInput(format!(
            "need at least 3 distinct points, got {}",
            pts.len()
        )));
    }

    let mut lower: Vec<Point2> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point2> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);

    if lower.len() < 3 || signed_area(&lower) < AREA_EPS {
        return Err(GeometryError::DegenerateInput("points are collinear".into()));
    }
    Ok(Polygon2D { vertices: lower })
}

/// Inclusive point-in-convex-polygon test; boundary points count as inside.
pub fn point_in_polygon(pt: Point2, p: &Polygon2D) -> bool {
    let scale = p.scale().max(pt.x.abs()).max(pt.y.abs());
    p.edges().all(|(a, b)| {
        let len = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
        cross(a, b, pt) >= -CMP_EPS * len.max(scale * f64::EPSILON)
    })
}

/// Clips `a` against convex `b`. Returns `None` when the overlap area is below
/// [`AREA_EPS`].
pub fn convex_intersection(a: &Polygon2D, b: &Polygon2D) -> Result<Option<Polygon2D>, GeometryError> {
    if !a.is_convex() || !b.is_convex() {
        return Err(GeometryError::NonConvexInput);
    }
    let mut output: Vec<Point2> = a.vertices.clone();
    for (e0, e1) in b.edges() {
        if output.is_empty() {
            break;
        }
        let input = std::mem::take(&mut output);
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let cur_in = cross(e0, e1, cur) >= 0.0;
            let prev_in = cross(e0, e1, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, e0, e1));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, e0, e1));
            }
        }
    }
    if output.len() < 3 || signed_area(&output).abs() < AREA_EPS {
        return Ok(None);
    }
    match hull_2d(&output) {
        Ok(h) if area(&h) >= AREA_EPS => Ok(Some(h)),
        _ => Ok(None),
    }
}

fn segment_line_intersection(p: Point2, q: Point2, e0: Point2, e1: Point2) -> Point2 {
    let dp = cross(e0, e1, p);
    let dq = cross(e0, e1, q);
    let t = dp / (dp - dq);
    Point2::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// `area(a ∩ b) / area(a)`; zero when they do not overlap.
pub fn overlap_fraction(a: &Polygon2D, b: &Polygon2D) -> Result<f64, GeometryError> {
    let base = area(a);
    if base < AREA_EPS {
        return Err(GeometryError::DegenerateInput("reference polygon has zero area".into()));
    }
    let inter = convex_intersection(a, b)?;
    Ok(inter.map_or(0.0, |p| (area(&p) / base).clamp(0.0, 1.0)))
}

/// A vertical prism: a convex footprint extruded over `[z_lo, z_hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prism {
    pub base: Polygon2D,
    pub z_lo: f64,
    pub z_hi: f64,
}

impl Prism {
    pub fn new(base: Polygon2D, z_lo: f64, z_hi: f64) -> Result<Self, GeometryError> {
        // Also rejects NaN bounds.
        if z_lo.partial_cmp(&z_hi) != Some(std::cmp::Ordering::Less) {
            return Err(GeometryError::DegenerateInput(format!(
                "prism needs z_lo < z_hi, got [{z_lo}, {z_hi}]"
            )));
        }
        Ok(Self { base, z_lo, z_hi })
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        p[2] >= self.z_lo - CMP_EPS
            && p[2] <= self.z_hi + CMP_EPS
            && point_in_polygon(Point2::new(p[0], p[1]), &self.base)
    }
}

/// Fraction of `points` inside the prism, boundary inclusive.
pub fn containment_fraction(points: &[[f64; 3]], prism: &Prism) -> Result<f64, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::DegenerateInput("no points".into()));
    }
    let inside = points.iter().filter(|p| prism.contains(**p)).count();
    Ok(inside as f64 / points.len() as f64)
}
