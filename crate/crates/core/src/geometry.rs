//! Assignment boundary, region membership, distances and evaluation grids.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points within this distance of a polygon edge count as treated.
pub const EDGE_TOLERANCE: f64 = 1e-12;

/// Default turning-angle threshold (radians) for kink detection.
pub const DEFAULT_KINK_TOLERANCE: f64 = 0.05;

/// A bivariate score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x1: f64,
    pub x2: f64,
}

impl Point {
    pub const fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    /// Checked constructor rejecting non-finite coordinates.
    pub fn try_new(x1: f64, x2: f64) -> Result<Self> {
        let p = Self { x1, x2 };
        p.check_finite()?;
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "non-finite coordinate ({}, {})",
                self.x1, self.x2
            )))
        }
    }

    fn sub(self, other: Point) -> (f64, f64) {
        (self.x1 - other.x1, self.x2 - other.x2)
    }

    fn norm_to(self, other: Point) -> f64 {
        let (dx, dy) = self.sub(other);
        dx.hypot(dy)
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point::new(v[0], v[1])
    }
}

/// Distance between scores. Implementations must be symmetric, vanish only on
/// the diagonal and satisfy the triangle inequality.
pub trait DistanceMetric: Send + Sync {
    fn distance(&self, a: Point, b: Point) -> f64;

    fn name(&self) -> &str {
        "custom"
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Euclidean;

impl DistanceMetric for Euclidean {
    #[inline]
    fn distance(&self, a: Point, b: Point) -> f64 {
        a.norm_to(b)
    }

    fn name(&self) -> &str {
        "euclidean"
    }
}

/// Checked distance: rejects non-finite inputs.
pub fn distance(a: Point, b: Point, metric: &dyn DistanceMetric) -> Result<f64> {
    a.check_finite()?;
    b.check_finite()?;
    Ok(metric.distance(a, b))
}

/// Sampled probe of the metric axioms, run before a user-supplied metric is
/// accepted.
pub fn validate_metric(metric: &dyn DistanceMetric, probes: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        Point::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0))
    };
    for _ in 0..probes {
        let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let ab = metric.distance(a, b);
        let ba = metric.distance(b, a);
        let scale = 1.0 + ab.abs();
        if !ab.is_finite() || ab < 0.0 {
            return Err(Error::InvalidInput(format!(
                "metric `{}` returned {ab} for distinct points",
                metric.name()
            )));
        }
        if (ab - ba).abs() > 1e-12 * scale {
            return Err(Error::InvalidInput(format!(
                "metric `{}` is not symmetric",
                metric.name()
            )));
        }
        if metric.distance(a, a) != 0.0 || ab == 0.0 {
            return Err(Error::InvalidInput(format!(
                "metric `{}` fails the identity axiom",
                metric.name()
            )));
        }
        let detour = metric.distance(a, c) + metric.distance(c, b);
        if ab > detour + 1e-12 * scale {
            return Err(Error::InvalidInput(format!(
                "metric `{}` violates the triangle inequality",
                metric.name()
            )));
        }
    }
    Ok(())
}

/// Side of the boundary a score falls on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Control,
    Treated,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Control, Side::Treated];

    /// `0` for control, `1` for treated.
    pub fn index(self) -> usize {
        match self {
            Side::Control => 0,
            Side::Treated => 1,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Control => f.write_str("control"),
            Side::Treated => f.write_str("treated"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisSign {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl AxisSign {
    fn admits(self, v: f64) -> bool {
        match self {
            AxisSign::Positive => v >= 0.0,
            AxisSign::Negative => v <= 0.0,
        }
    }
}

/// Treatment assignment. Points on the boundary always belong to the treated
/// region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentRule {
    Quadrant {
        x1_sign: AxisSign,
        x2_sign: AxisSign,
    },
    /// Closed polygon (implicitly closed, last vertex joins the first) with
    /// even-odd interior.
    Polygon(Vec<Point>),
}

impl AssignmentRule {
    /// Treated iff `x1 >= 0` and `x2 >= 0`.
    pub fn first_quadrant() -> Self {
        AssignmentRule::Quadrant {
            x1_sign: AxisSign::Positive,
            x2_sign: AxisSign::Positive,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let AssignmentRule::Polygon(v) = self {
            if v.len() < 3 {
                return Err(Error::InvalidInput(
                    "polygon rule needs at least 3 vertices".into(),
                ));
            }
            for p in v {
                p.check_finite()?;
            }
        }
        Ok(())
    }

    pub fn side_of(&self, p: Point) -> Side {
        if self.is_treated(p) {
            Side::Treated
        } else {
            Side::Control
        }
    }

    pub fn is_treated(&self, p: Point) -> bool {
        match self {
            AssignmentRule::Quadrant { x1_sign, x2_sign } => {
                x1_sign.admits(p.x1) && x2_sign.admits(p.x2)
            }
            AssignmentRule::Polygon(vertices) => polygon_membership(vertices, p),
        }
    }
}

fn polygon_membership(vertices: &[Point], p: Point) -> bool {
    let n = vertices.len();
    let mut inside = false;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        if segment_distance(a, b, p) <= EDGE_TOLERANCE {
            return true;
        }
        if (a.x2 > p.x2) != (b.x2 > p.x2) {
            let cross_x1 = a.x1 + (p.x2 - a.x2) * (b.x1 - a.x1) / (b.x2 - a.x2);
            if p.x1 < cross_x1 {
                inside = !inside;
            }
        }
    }
    inside
}

/// Parameter in `[0, 1]` of the closest point on segment `ab` to `p`.
fn segment_param(a: Point, b: Point, p: Point) -> f64 {
    let (dx, dy) = b.sub(a);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return 0.0;
    }
    let (px, py) = p.sub(a);
    ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    Point::new(a.x1 + t * (b.x1 - a.x1), a.x2 + t * (b.x2 - a.x2))
}

fn segment_distance(a: Point, b: Point, p: Point) -> f64 {
    lerp(a, b, segment_param(a, b, p)).norm_to(p)
}

/// Signed distance score: `+d` for treated observations, `-d` for control.
pub fn signed_distance(
    x: Point,
    eval_pt: Point,
    rule: &AssignmentRule,
    metric: &dyn DistanceMetric,
) -> Result<f64> {
    let d = distance(x, eval_pt, metric)?;
    Ok(match rule.side_of(x) {
        Side::Treated => d,
        Side::Control => -d,
    })
}

/// Closest point on a polyline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub point: Point,
    pub arclength: f64,
    pub distance: f64,
}

/// The assignment boundary as a piecewise-linear curve with marked kinks.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    vertices: Vec<Point>,
    kinks: BTreeSet<usize>,
    cumulative: Vec<f64>,
}

impl Polyline {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        Self::with_kinks(vertices, [])
    }

    pub fn with_kinks(vertices: Vec<Point>, kinks: impl IntoIterator<Item = usize>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::InvalidInput(
                "polyline needs at least 2 vertices".into(),
            ));
        }
        let mut cumulative = Vec::with_capacity(vertices.len());
        cumulative.push(0.0);
        for (i, w) in vertices.windows(2).enumerate() {
            w[0].check_finite()?;
            w[1].check_finite()?;
            let seg = w[0].norm_to(w[1]);
            if seg == 0.0 {
                return Err(Error::InvalidInput(format!(
                    "polyline vertices {i} and {} coincide",
                    i + 1
                )));
            }
            cumulative.push(cumulative[i] + seg);
        }
        if !cumulative[cumulative.len() - 1].is_finite() {
            return Err(Error::InvalidInput("polyline length is not finite".into()));
        }
        let kinks: BTreeSet<usize> = kinks.into_iter().collect();
        let last = vertices.len() - 1;
        if let Some(&k) = kinks.iter().find(|&&k| k == 0 || k >= last) {
            return Err(Error::InvalidInput(format!(
                "kink index {k} is not an interior vertex"
            )));
        }
        Ok(Self {
            vertices,
            kinks,
            cumulative,
        })
    }

    /// Builds the polyline and marks every vertex whose turning angle exceeds
    /// `angle_tol`.
    pub fn with_detected_kinks(vertices: Vec<Point>, angle_tol: f64) -> Result<Self> {
        let plain = Self::new(vertices)?;
        let kinks = detect_kinks(&plain, angle_tol)?;
        Ok(Self { kinks, ..plain })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn kinks(&self) -> &BTreeSet<usize> {
        &self.kinks
    }

    pub fn kink_points(&self) -> impl Iterator<Item = Point> + '_ {
        self.kinks.iter().map(|&i| self.vertices[i])
    }

    pub fn cumulative_arclength(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn length(&self) -> f64 {
        self.cumulative[self.cumulative.len() - 1]
    }

    fn segments(&self) -> impl Iterator<Item = (usize, Point, Point)> + '_ {
        self.vertices
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i, w[0], w[1]))
    }

    /// Point at arc length `s`, clamped to `[0, length]`.
    pub fn point_at(&self, s: f64) -> Point {
        let s = s.clamp(0.0, self.length());
        // first segment whose end lies at or beyond s
        let seg = self
            .cumulative
            .partition_point(|&c| c < s)
            .clamp(1, self.vertices.len() - 1)
            - 1;
        let (start, end) = (self.cumulative[seg], self.cumulative[seg + 1]);
        let t = ((s - start) / (end - start)).clamp(0.0, 1.0);
        lerp(self.vertices[seg], self.vertices[seg + 1], t)
    }

    /// Arc length of the vertex at `index`.
    pub fn vertex_arclength(&self, index: usize) -> f64 {
        self.cumulative[index]
    }

    pub fn project(&self, p: Point) -> Projection {
        let mut best = Projection {
            point: self.vertices[0],
            arclength: 0.0,
            distance: f64::INFINITY,
        };
        for (i, a, b) in self.segments() {
            let t = segment_param(a, b, p);
            let q = lerp(a, b, t);
            let d = q.norm_to(p);
            if d < best.distance {
                best = Projection {
                    point: q,
                    arclength: self.cumulative[i] + t * (self.cumulative[i + 1] - self.cumulative[i]),
                    distance: d,
                };
            }
        }
        best
    }

    /// Euclidean distance from `p` to the nearest point of the polyline.
    pub fn distance_to(&self, p: Point) -> f64 {
        self.segments()
            .map(|(_, a, b)| segment_distance(a, b, p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest distance from `p` to a marked kink, if any kink exists.
    pub fn distance_to_nearest_kink(&self, p: Point, metric: &dyn DistanceMetric) -> Option<f64> {
        self.kink_points()
            .map(|k| metric.distance(p, k))
            .reduce(f64::min)
    }

    /// Length of the part of the polyline inside the closed disc of radius
    /// `radius` around `center`.
    pub fn length_within(&self, center: Point, radius: f64) -> f64 {
        let r2 = radius * radius;
        self.segments()
            .map(|(_, a, b)| {
                let (dx, dy) = b.sub(a);
                let (fx, fy) = a.sub(center);
                let qa = dx * dx + dy * dy;
                let qb = 2.0 * (fx * dx + fy * dy);
                let qc = fx * fx + fy * fy - r2;
                let disc = qb * qb - 4.0 * qa * qc;
                if disc <= 0.0 {
                    return 0.0;
                }
                let root = disc.sqrt();
                let lo = ((-qb - root) / (2.0 * qa)).max(0.0);
                let hi = ((-qb + root) / (2.0 * qa)).min(1.0);
                (hi - lo).max(0.0) * qa.sqrt()
            })
            .sum()
    }
}

/// Interior vertices whose absolute turning angle exceeds `angle_tol`.
pub fn detect_kinks(polyline: &Polyline, angle_tol: f64) -> Result<BTreeSet<usize>> {
    if !(angle_tol > 0.0 && angle_tol < std::f64::consts::FRAC_PI_2) {
        return Err(Error::InvalidInput(format!(
            "kink angle tolerance {angle_tol} outside (0, pi/2)"
        )));
    }
    let v = polyline.vertices();
    Ok((1..v.len() - 1)
        .filter(|&i| {
            let (ax, ay) = v[i].sub(v[i - 1]);
            let (bx, by) = v[i + 1].sub(v[i]);
            let turn = (ax * by - ay * bx).atan2(ax * bx + ay * by);
            turn.abs() > angle_tol
        })
        .collect())
}

/// Evaluation points placed along the boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalGrid {
    pub points: Vec<Point>,
    pub arclengths: Vec<f64>,
}

impl EvalGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// A grid from explicit points (no arc-length information is checked).
    pub fn from_points(points: Vec<Point>) -> Self {
        let arclengths = (0..points.len()).map(|i| i as f64).collect();
        Self { points, arclengths }
    }
}

/// `m` points at equal arc-length spacing, endpoints included. A single point
/// sits at the arc-length midpoint.
pub fn make_grid(polyline: &Polyline, m: usize) -> Result<EvalGrid> {
    if m == 0 {
        return Err(Error::InvalidInput("grid size must be positive".into()));
    }
    let length = polyline.length();
    if !(length > 0.0) {
        return Err(Error::InvalidInput("polyline has zero length".into()));
    }
    let arclengths: Vec<f64> = if m == 1 {
        vec![0.5 * length]
    } else {
        let step = length / (m - 1) as f64;
        (0..m)
            .map(|k| if k == m - 1 { length } else { k as f64 * step })
            .collect()
    };
    let points = arclengths.iter().map(|&s| polyline.point_at(s)).collect();
    Ok(EvalGrid { points, arclengths })
}

/// Boundary curve together with the rule that assigns treatment.
#[derive(Clone, Debug, PartialEq)]
pub struct Boundary {
    pub polyline: Polyline,
    pub rule: AssignmentRule,
}

impl Boundary {
    /// L-shaped boundary `{x1 = 0, 0 <= x2 <= extent} ∪ {x2 = 0, 0 <= x1 <= extent}`
    /// with its kink at the origin and the first quadrant treated.
    pub fn l_shape(extent: f64) -> Result<Self> {
        let polyline = Polyline::with_kinks(
            vec![
                Point::new(0.0, extent),
                Point::new(0.0, 0.0),
                Point::new(extent, 0.0),
            ],
            [1],
        )?;
        Ok(Self {
            polyline,
            rule: AssignmentRule::first_quadrant(),
        })
    }
}
