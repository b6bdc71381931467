//! Planar part geometry: polygons, mass properties, poses and tray queries.
//!
//! Parts are simple polygons (convex or not) stored in a body frame whose
//! origin is the center of mass. A [`Pose`] always places that center of
//! mass in the tray frame. The tray interior is the axis-aligned rectangle
//! `[0, a] x [0, b]`; because it is convex, every contact between a part and
//! the tray is witnessed by a part vertex crossing one of the four wall
//! half-planes.

use std::f64::consts::TAU;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Polygons with less area than this (m²) are rejected as degenerate.
pub const MIN_AREA: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon vertex {0} is not finite")]
    NonFinite(usize),
    #[error("polygon is degenerate (area {0:e} m²)")]
    Degenerate(f64),
    #[error("polygon is clockwise; vertices must be counter-clockwise")]
    Clockwise,
    #[error("polygon is self-intersecting (edges {0} and {1})")]
    SelfIntersecting(usize, usize),
    #[error("density must be positive and finite, got {0}")]
    BadDensity(f64),
    #[error("tray dimensions must be positive, got {0} x {1}")]
    BadTray(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    #[inline]
    pub fn rotate(self, cos: f64, sin: f64) -> Vec2 {
        Vec2::new(cos * self.x - sin * self.y, sin * self.x + cos * self.y)
    }

    /// `omega x self` for an out-of-plane angular velocity.
    #[inline]
    pub fn perp_scaled(self, omega: f64) -> Vec2 {
        Vec2::new(-omega * self.y, omega * self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    #[inline]
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

/// Normalizes an angle to `[0, 2π)`.
#[inline]
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Position of the part's center of mass and its orientation, in the tray frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    #[inline]
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Maps a body-frame point into the tray frame.
    #[inline]
    pub fn transform(&self, p: Vec2) -> Vec2 {
        let (s, c) = self.theta.sin_cos();
        p.rotate(c, s) + self.position()
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let p = self.transform(other.position());
        Pose::new(p.x, p.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose {
        let (s, c) = self.theta.sin_cos();
        let p = (-self.position()).rotate(c, -s);
        Pose::new(p.x, p.y, -self.theta)
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6}, {:.6})", self.x, self.y, self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassProperties {
    pub mass: f64,
    pub com: Vec2,
    /// Polar moment about the center of mass.
    pub inertia: f64,
    pub area: f64,
}

/// Signed area of a closed polygon (positive when counter-clockwise).
pub fn signed_area(vertices: &[Vec2]) -> f64 {
    if vertices.len() < 3 {
        return 0.0;
    }
    let o = vertices[0];
    let mut twice = 0.0;
    for i in 1..vertices.len() - 1 {
        twice += (vertices[i] - o).cross(vertices[i + 1] - o);
    }
    0.5 * twice
}

/// Mass, area centroid and polar moment of a uniform-density polygon via
/// Green's theorem. Vertices are shifted to the first vertex before summing
/// to keep the integrals well conditioned far from the origin.
pub fn compute_mass_properties(
    vertices: &[Vec2],
    density: f64,
) -> Result<MassProperties, GeometryError> {
    validate_polygon(vertices)?;
    if !(density > 0.0 && density.is_finite()) {
        return Err(GeometryError::BadDensity(density));
    }
    let origin = vertices[0];
    let n = vertices.len();
    let mut twice_area = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    let mut second = 0.0;
    for i in 0..n {
        let p = vertices[i] - origin;
        let q = vertices[(i + 1) % n] - origin;
        let w = p.cross(q);
        twice_area += w;
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
        second += w * (p.x * p.x + p.x * q.x + q.x * q.x + p.y * p.y + p.y * q.y + q.y * q.y);
    }
    let area = 0.5 * twice_area;
    let centroid = Vec2::new(cx / (3.0 * twice_area), cy / (3.0 * twice_area));
    let polar_about_origin = second / 12.0;
    let polar_about_com = polar_about_origin - area * centroid.dot(centroid);
    Ok(MassProperties {
        mass: density * area,
        com: centroid + origin,
        inertia: density * polar_about_com,
        area,
    })
}

fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = (p2 - p1).cross(q1 - p1);
    let d2 = (p2 - p1).cross(q2 - p1);
    let d3 = (q2 - q1).cross(p1 - q1);
    let d4 = (q2 - q1).cross(p2 - q1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on_segment = |a: Vec2, b: Vec2, c: Vec2| {
        c.x >= a.x.min(b.x) && c.x <= a.x.max(b.x) && c.y >= a.y.min(b.y) && c.y <= a.y.max(b.y)
    };
    (d1 == 0.0 && on_segment(p1, p2, q1))
        || (d2 == 0.0 && on_segment(p1, p2, q2))
        || (d3 == 0.0 && on_segment(q1, q2, p1))
        || (d4 == 0.0 && on_segment(q1, q2, p2))
}

/// Checks vertex count, finiteness, orientation, area and simplicity.
pub fn validate_polygon(vertices: &[Vec2]) -> Result<(), GeometryError> {
    let n = vertices.len();
    if n < 3 {
        return Err(GeometryError::TooFewVertices(n));
    }
    if let Some(i) = vertices
        .iter()
        .position(|v| !(v.x.is_finite() && v.y.is_finite()))
    {
        return Err(GeometryError::NonFinite(i));
    }
    let area = signed_area(vertices);
    if area.abs() <= MIN_AREA {
        return Err(GeometryError::Degenerate(area));
    }
    if area < 0.0 {
        return Err(GeometryError::Clockwise);
    }
    for i in 0..n {
        let (a1, a2) = (vertices[i], vertices[(i + 1) % n]);
        if a1 == a2 {
            return Err(GeometryError::SelfIntersecting(i, (i + 1) % n));
        }
        for j in i + 1..n {
            // adjacent edges share a vertex by construction
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (b1, b2) = (vertices[j], vertices[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return Err(GeometryError::SelfIntersecting(i, j));
            }
        }
    }
    Ok(())
}

/// Even-odd point-in-polygon test. Points exactly on an edge may go either way.
pub fn point_in_polygon(p: Vec2, vertices: &[Vec2]) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (vi, vj) = (vertices[i], vertices[j]);
        if (vi.y > p.y) != (vj.y > p.y) {
            let x_cross = vj.x + (p.y - vj.y) * (vi.x - vj.x) / (vi.y - vj.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// A named polygonal part with uniform areal density (kg/m²).
///
/// Construction re-centers the vertices on the center of mass, so the stored
/// body frame always has its origin at the COM. Input that is already
/// centered to rounding precision is kept as given, so saving and reloading
/// a shape reproduces it bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct PartShape {
    name: String,
    density: f64,
    vertices: Vec<Vec2>,
}

impl PartShape {
    pub fn new(
        name: impl Into<String>,
        vertices: Vec<Vec2>,
        density: f64,
    ) -> Result<Self, GeometryError> {
        let props = compute_mass_properties(&vertices, density)?;
        let scale = vertices.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let vertices = if props.com.norm() <= 1e-12 * scale {
            vertices
        } else {
            vertices.into_iter().map(|v| v - props.com).collect()
        };
        Ok(PartShape {
            name: name.into(),
            density,
            vertices,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    /// Body-frame vertices, counter-clockwise, COM at the origin.
    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn mass_properties(&self) -> MassProperties {
        compute_mass_properties(&self.vertices, self.density)
            .expect("validated at construction")
    }

    /// Largest distance from the COM to a vertex.
    pub fn radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// A part with its mass and polar moment about the COM.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidBody {
    pub shape: PartShape,
    pub mass: f64,
    pub inertia: f64,
}

impl RigidBody {
    pub fn new(shape: PartShape) -> Self {
        let props = shape.mass_properties();
        RigidBody {
            mass: props.mass,
            inertia: props.inertia,
            shape,
        }
    }

    pub fn vertices(&self) -> &[Vec2] {
        self.shape.vertices()
    }
}

/// Interior of the rectangle `[0, a] x [0, b]` (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tray {
    pub a: f64,
    pub b: f64,
}

impl Tray {
    pub fn new(a: f64, b: f64) -> Result<Self, GeometryError> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(GeometryError::BadTray(a, b));
        }
        Ok(Tray { a, b })
    }

    /// The 200 mm square tray.
    pub fn square_200mm() -> Self {
        Tray { a: 0.2, b: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Wall {
    Left,
    Right,
    Bottom,
    Top,
}

impl Wall {
    pub const ALL: [Wall; 4] = [Wall::Left, Wall::Right, Wall::Bottom, Wall::Top];

    /// Unit normal pointing into the tray interior.
    pub fn inward_normal(self) -> Vec2 {
        match self {
            Wall::Left => Vec2::new(1.0, 0.0),
            Wall::Right => Vec2::new(-1.0, 0.0),
            Wall::Bottom => Vec2::new(0.0, 1.0),
            Wall::Top => Vec2::new(0.0, -1.0),
        }
    }

    /// Signed distance of `p` beyond this wall (positive = outside the tray).
    #[inline]
    pub fn depth(self, p: Vec2, tray: &Tray) -> f64 {
        match self {
            Wall::Left => -p.x,
            Wall::Right => p.x - tray.a,
            Wall::Bottom => -p.y,
            Wall::Top => p.y - tray.b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penetration {
    pub vertex: usize,
    pub wall: Wall,
    pub depth: f64,
}

pub fn world_vertices(body: &RigidBody, pose: &Pose) -> Vec<Vec2> {
    let (s, c) = pose.theta.sin_cos();
    let t = pose.position();
    body.vertices().iter().map(|v| v.rotate(c, s) + t).collect()
}

/// Every (vertex, wall) pair with the vertex strictly outside that wall.
pub fn penetration_depths(body: &RigidBody, pose: &Pose, tray: &Tray) -> Vec<Penetration> {
    let mut out = Vec::new();
    for (vertex, p) in world_vertices(body, pose).into_iter().enumerate() {
        for wall in Wall::ALL {
            let depth = wall.depth(p, tray);
            if depth > 0.0 {
                out.push(Penetration {
                    vertex,
                    wall,
                    depth,
                });
            }
        }
    }
    out
}

pub fn in_free_space(body: &RigidBody, pose: &Pose, tray: &Tray) -> bool {
    penetration_depths(body, pose, tray).is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn unit_square() -> Vec<Vec2> {
        vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ]
    }

    fn square_body(side: f64) -> RigidBody {
        let v = unit_square().into_iter().map(|p| p * side).collect();
        RigidBody::new(PartShape::new("sq", v, 1.0).unwrap())
    }

    #[test]
    fn unit_square_mass_properties() {
        let p = compute_mass_properties(&unit_square(), 1.0).unwrap();
        assert_relative_eq!(p.mass, 1.0, epsilon = 1e-15);
        assert_relative_eq!(p.com.x, 0.5, epsilon = 1e-15);
        assert_relative_eq!(p.com.y, 0.5, epsilon = 1e-15);
        assert_relative_eq!(p.inertia, 1.0 / 6.0, epsilon = 1e-15);

        let p2 = compute_mass_properties(&unit_square(), 2.0).unwrap();
        assert_relative_eq!(p2.mass, 2.0, epsilon = 1e-15);
        assert_relative_eq!(p2.inertia, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_polygons() {
        assert_eq!(
            compute_mass_properties(&unit_square()[..2], 1.0),
            Err(GeometryError::TooFewVertices(2))
        );
        let line = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)];
        assert!(matches!(
            compute_mass_properties(&line, 1.0),
            Err(GeometryError::Degenerate(_))
        ));
        let mut cw = unit_square();
        cw.reverse();
        assert_eq!(compute_mass_properties(&cw, 1.0), Err(GeometryError::Clockwise));
        // bow-tie with positive net area
        let bowtie = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(2.0, 2.0),
            Vec2::new(1.0, -1.0),
            Vec2::new(0.0, 2.0),
        ];
        assert!(matches!(
            compute_mass_properties(&bowtie, 1.0),
            Err(GeometryError::SelfIntersecting(..))
        ));
        assert!(matches!(
            compute_mass_properties(&unit_square(), 0.0),
            Err(GeometryError::BadDensity(_))
        ));
    }

    #[test]
    fn construction_centers_on_com() {
        let shape = PartShape::new("sq", unit_square(), 1.0).unwrap();
        let com = shape.mass_properties().com;
        assert!(com.norm() < 1e-12);
        assert_eq!(shape.vertices()[0], Vec2::new(-0.5, -0.5));
    }

    #[test]
    fn rebuilding_a_centered_shape_is_exact() {
        let skew = vec![Vec2::new(0.0, 0.0), Vec2::new(0.031, 0.002), Vec2::new(0.007, 0.019)];
        let shape = PartShape::new("tri", skew, 39.0).unwrap();
        let again = PartShape::new("tri", shape.vertices().to_vec(), 39.0).unwrap();
        assert_eq!(again, shape);
    }

    #[test]
    fn world_vertices_transforms() {
        let body = square_body(1.0);
        assert_eq!(world_vertices(&body, &Pose::new(0.0, 0.0, 0.0)), body.vertices());

        let turned = world_vertices(&body, &Pose::new(0.0, 0.0, FRAC_PI_2));
        // body vertex (0.5, -0.5) is index 1
        assert_relative_eq!(turned[1].x, 0.5, epsilon = 1e-15);
        assert_relative_eq!(turned[1].y, 0.5, epsilon = 1e-15);

        let shifted = world_vertices(&body, &Pose::new(1.0, 2.0, 0.0));
        for (w, b) in shifted.iter().zip(body.vertices()) {
            assert_eq!(*w, *b + Vec2::new(1.0, 2.0));
        }
    }

    #[test]
    fn penetration_examples() {
        let tray = Tray::new(0.2, 0.2).unwrap();
        let violated = |p: Vec2| {
            Wall::ALL
                .iter()
                .filter_map(|w| {
                    let d = w.depth(p, &tray);
                    (d > 0.0).then_some((*w, d))
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(violated(Vec2::new(-0.001, 0.05)), vec![(Wall::Left, 0.001)]);
        assert_eq!(violated(Vec2::new(0.1, 0.1)), vec![]);
        assert_eq!(
            violated(Vec2::new(-0.001, -0.002)),
            vec![(Wall::Left, 0.001), (Wall::Bottom, 0.002)]
        );
    }

    #[test]
    fn free_space_examples() {
        let tray = Tray::new(0.2, 0.2).unwrap();
        let body = square_body(0.1);
        assert!(in_free_space(&body, &Pose::new(0.1, 0.1, 0.0), &tray));
        assert!(!in_free_space(&body, &Pose::new(0.04, 0.1, 0.0), &tray));
        // half-diagonal 0.0707 > 0.06 once rotated by 45 degrees
        assert!(!in_free_space(&body, &Pose::new(0.06, 0.1, FRAC_PI_4), &tray));
        assert!(in_free_space(&body, &Pose::new(0.075, 0.1, FRAC_PI_4), &tray));
        let pens = penetration_depths(&body, &Pose::new(0.04, 0.1, 0.0), &tray);
        assert_eq!(pens.len(), 2);
        assert!(pens
            .iter()
            .all(|p| p.wall == Wall::Left && (p.depth - 0.01).abs() < 1e-15));
    }

    #[test]
    fn angles_normalize_into_range() {
        assert_eq!(normalize_angle(TAU), 0.0);
        assert_eq!(normalize_angle(-1e-300), 0.0);
        assert_relative_eq!(normalize_angle(-PI), PI);
        assert_relative_eq!(normalize_angle(5.0 * PI), PI, epsilon = 1e-12);
        let p = Pose::new(0.0, 0.0, -0.5);
        assert!(p.theta >= 0.0 && p.theta < TAU);
    }

    #[test]
    fn point_in_polygon_respects_notch() {
        let l = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(3.0, 0.0),
            Vec2::new(3.0, 1.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 3.0),
            Vec2::new(0.0, 3.0),
        ];
        assert!(point_in_polygon(Vec2::new(0.5, 2.5), &l));
        assert!(point_in_polygon(Vec2::new(2.5, 0.5), &l));
        assert!(!point_in_polygon(Vec2::new(2.0, 2.0), &l));
    }
}
