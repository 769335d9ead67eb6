//! Workspace obstacles, capsule clearance queries and the binary collision
//! function over configurations.

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{field_error, invalid, Result};
use crate::kinematics::{link_capsules, ArmSpec};

/// Number of interpolation intervals used when checking an edge between
/// two waypoints.
pub const DEFAULT_EDGE_SUBSTEPS: usize = 10;

/// A segment swept by a disc of `radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Point2<f64>,
    pub b: Point2<f64>,
    pub radius: f64,
}

impl Capsule {
    pub fn new(a: Point2<f64>, b: Point2<f64>, radius: f64) -> Self {
        Self { a, b, radius }
    }

    pub fn translated(&self, t: Vector2<f64>) -> Self {
        Self::new(self.a + t, self.b + t, self.radius)
    }
}

/// Workspace obstacle.
///
/// Half-planes are given by an outward unit normal `n` and offset `c`; the
/// occupied region is `{p : n·p ≤ c}` and the signed distance of a point is
/// `n·p − c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obstacle {
    Circle { center: [f64; 2], radius: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
    HalfPlane { normal: [f64; 2], offset: f64 },
}

impl Obstacle {
    pub fn circle(center: [f64; 2], radius: f64) -> Self {
        Obstacle::Circle { center, radius }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Obstacle::Circle { center, radius } => {
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(invalid(format!(
                        "circle radius must be positive, got {radius}"
                    )));
                }
                if center.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("circle center is not finite"));
                }
            }
            Obstacle::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(invalid(format!(
                        "polygon needs at least 3 vertices, got {}",
                        vertices.len()
                    )));
                }
                let pts = to_points(vertices);
                let n = pts.len();
                for i in 0..n {
                    let (p0, p1, p2) = (pts[i], pts[(i + 1) % n], pts[(i + 2) % n]);
                    if cross(p1 - p0, p2 - p1) <= 0.0 {
                        return Err(invalid(format!(
                            "polygon is not strictly convex counterclockwise at vertex {}",
                            (i + 1) % n
                        )));
                    }
                }
            }
            Obstacle::HalfPlane { normal, offset } => {
                let len = Vector2::new(normal[0], normal[1]).norm();
                if (len - 1.0).abs() > 1e-9 {
                    return Err(invalid(format!(
                        "half-plane normal must be unit length, has {len}"
                    )));
                }
                if !offset.is_finite() {
                    return Err(invalid("half-plane offset is not finite"));
                }
            }
        }
        Ok(())
    }

    pub fn translated(&self, t: Vector2<f64>) -> Self {
        let shift = |p: &[f64; 2]| [p[0] + t.x, p[1] + t.y];
        match self {
            Obstacle::Circle { center, radius } => Obstacle::Circle {
                center: shift(center),
                radius: *radius,
            },
            Obstacle::Polygon { vertices } => Obstacle::Polygon {
                vertices: vertices.iter().map(shift).collect(),
            },
            Obstacle::HalfPlane { normal, offset } => Obstacle::HalfPlane {
                normal: *normal,
                offset: offset + normal[0] * t.x + normal[1] * t.y,
            },
        }
    }
}

fn to_points(v: &[[f64; 2]]) -> Vec<Point2<f64>> {
    v.iter().map(|p| Point2::new(p[0], p[1])).collect()
}

fn cross(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

pub fn point_segment_distance(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    };
    (p - (a + ab * t)).norm()
}

fn segments_intersect(p1: Point2<f64>, p2: Point2<f64>, q1: Point2<f64>, q2: Point2<f64>) -> bool {
    let d1 = cross(q2 - q1, p1 - q1);
    let d2 = cross(q2 - q1, p2 - q1);
    let d3 = cross(p2 - p1, q1 - p1);
    let d4 = cross(p2 - p1, q2 - p1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Point2<f64>, b: Point2<f64>, p: Point2<f64>, d: f64| {
        d == 0.0
            && p.x >= a.x.min(b.x)
            && p.x <= a.x.max(b.x)
            && p.y >= a.y.min(b.y)
            && p.y <= a.y.max(b.y)
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

fn segment_segment_distance(
    p1: Point2<f64>,
    p2: Point2<f64>,
    q1: Point2<f64>,
    q2: Point2<f64>,
) -> f64 {
    if segments_intersect(p1, p2, q1, q2) {
        return 0.0;
    }
    point_segment_distance(p1, q1, q2)
        .min(point_segment_distance(p2, q1, q2))
        .min(point_segment_distance(q1, p1, p2))
        .min(point_segment_distance(q2, p1, p2))
}

fn point_in_convex(p: Point2<f64>, poly: &[Point2<f64>]) -> bool {
    let n = poly.len();
    (0..n).all(|i| cross(poly[(i + 1) % n] - poly[i], p - poly[i]) >= 0.0)
}

/// Penetration depth of the deepest point of a segment that touches a convex
/// polygon. Inside the polygon the signed distance of a point is the largest
/// signed edge-line distance, which is convex along the segment, so a
/// ternary search finds its minimum.
fn segment_depth(a: Point2<f64>, b: Point2<f64>, poly: &[Point2<f64>]) -> f64 {
    let n = poly.len();
    let signed = |p: Point2<f64>| {
        (0..n)
            .map(|i| {
                let e = poly[(i + 1) % n] - poly[i];
                let outward = Vector2::new(e.y, -e.x) / e.norm();
                outward.dot(&(p - poly[i]))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let at = |s: f64| signed(a + (b - a) * s);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if at(m1) <= at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    (-at(0.5 * (lo + hi))).max(0.0)
}

/// Signed separation between a capsule surface and an obstacle surface.
///
/// Exact for circles and half-planes. For polygons the value is exact while
/// the capsule's core segment stays outside; once the segment touches the
/// polygon the result is `−radius` minus the depth of the segment's deepest
/// point, so the penalty keeps a gradient inside the polygon.
pub fn capsule_obstacle_distance(capsule: &Capsule, obstacle: &Obstacle) -> Result<f64> {
    let d = match obstacle {
        Obstacle::Circle { center, radius } => {
            let c = Point2::new(center[0], center[1]);
            point_segment_distance(c, capsule.a, capsule.b) - radius - capsule.radius
        }
        Obstacle::HalfPlane { normal, offset } => {
            let n = Vector2::new(normal[0], normal[1]);
            let da = n.dot(&capsule.a.coords) - offset;
            let db = n.dot(&capsule.b.coords) - offset;
            da.min(db) - capsule.radius
        }
        Obstacle::Polygon { vertices } => {
            if vertices.len() < 3 {
                return Err(invalid("degenerate polygon"));
            }
            let poly = to_points(vertices);
            if point_in_convex(capsule.a, &poly) || point_in_convex(capsule.b, &poly) {
                return Ok(-segment_depth(capsule.a, capsule.b, &poly) - capsule.radius);
            }
            let n = poly.len();
            let mut best = f64::INFINITY;
            for i in 0..n {
                let d = segment_segment_distance(capsule.a, capsule.b, poly[i], poly[(i + 1) % n]);
                if d == 0.0 {
                    return Ok(-segment_depth(capsule.a, capsule.b, &poly) - capsule.radius);
                }
                best = best.min(d);
            }
            best - capsule.radius
        }
    };
    Ok(d)
}

/// Arm plus obstacles: everything the collision function depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub arm: ArmSpec,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

impl Environment {
    pub fn new(arm: ArmSpec, obstacles: Vec<Obstacle>) -> Result<Self> {
        let env = Self { arm, obstacles };
        env.validate()?;
        Ok(env)
    }

    pub fn free(arm: ArmSpec) -> Self {
        Self {
            arm,
            obstacles: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arm.validate()?;
        for (i, o) in self.obstacles.iter().enumerate() {
            o.validate()
                .map_err(|e| field_error(format!("obstacles[{i}]"), e.to_string()))?;
        }
        Ok(())
    }

    pub fn n_joints(&self) -> usize {
        self.arm.n_joints()
    }
}

/// Smallest capsule–obstacle separation over every link and obstacle;
/// `f64::INFINITY` in free space.
///
/// # Panics
/// If `q` does not have one entry per joint.
pub fn min_clearance(q: &[f64], env: &Environment) -> f64 {
    if env.obstacles.is_empty() {
        return f64::INFINITY;
    }
    let capsules = link_capsules(q, &env.arm).expect("configuration dimension mismatch");
    let mut best = f64::INFINITY;
    for cap in &capsules {
        for obs in &env.obstacles {
            // Obstacles are validated on construction.
            let d = capsule_obstacle_distance(cap, obs).unwrap_or(f64::NEG_INFINITY);
            best = best.min(d);
        }
    }
    best
}

/// `true` when any link penetrates an obstacle or a joint leaves its limits.
pub fn in_collision(q: &[f64], env: &Environment) -> bool {
    !env.arm.within_limits(q) || min_clearance(q, env) < 0.0
}

/// Checks the straight joint-space edge `q_a → q_b` at `substeps + 1`
/// evenly spaced fractions, endpoints included.
pub fn edge_in_collision(q_a: &[f64], q_b: &[f64], env: &Environment, substeps: usize) -> bool {
    let steps = substeps.max(1);
    let mut q = vec![0.0; q_a.len()];
    (0..=steps).any(|k| {
        let s = k as f64 / steps as f64;
        for (j, v) in q.iter_mut().enumerate() {
            *v = q_a[j] + s * (q_b[j] - q_a[j]);
        }
        in_collision(&q, env)
    })
}
