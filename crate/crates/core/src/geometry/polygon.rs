//! Planar polygons and 2D convex-polygon routines.

use nalgebra::{Point2, Vector3};
use serde::{Deserialize, Serialize};

use super::{tol, GeometryError, Plane, PlaneFrame, Pose};

/// Twice the signed area would overflow nothing at room scale; anything
/// below this is treated as an empty polygon.
const EMPTY_AREA: f64 = 1e-14;

/// Shoelace signed area, positive for counter-clockwise order.
pub fn signed_area(pts: &[Point2<f64>]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

pub fn area(pts: &[Point2<f64>]) -> f64 {
    signed_area(pts).abs()
}

pub fn centroid(pts: &[Point2<f64>]) -> Point2<f64> {
    let a = signed_area(pts);
    if a.abs() < EMPTY_AREA {
        let n = pts.len().max(1) as f64;
        let sum = pts.iter().fold(nalgebra::Vector2::zeros(), |s, p| s + p.coords);
        return Point2::from(sum / n);
    }
    let n = pts.len();
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let p = pts[i];
        let q = pts[(i + 1) % n];
        let cross = p.x * q.y - q.x * p.y;
        cx += (p.x + q.x) * cross;
        cy += (p.y + q.y) * cross;
    }
    Point2::new(cx / (6.0 * a), cy / (6.0 * a))
}

/// True for a counter-clockwise (or collinear-degenerate) convex polygon.
pub fn is_convex(pts: &[Point2<f64>]) -> bool {
    let n = pts.len();
    if n < 3 {
        return false;
    }
    (0..n).all(|i| {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        let c = pts[(i + 2) % n];
        (b - a).perp(&(c - b)) >= -1e-12
    })
}

/// Keeps the part of `poly` where `a·x + b·y + c >= 0`.
///
/// One Sutherland–Hodgman pass; exact for convex input.
pub fn clip_halfplane(poly: &[Point2<f64>], a: f64, b: f64, c: f64) -> Vec<Point2<f64>> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 2);
    if n == 0 {
        return out;
    }
    let eval = |p: &Point2<f64>| a * p.x + b * p.y + c;
    for i in 0..n {
        let s = poly[i];
        let e = poly[(i + 1) % n];
        let fs = eval(&s);
        let fe = eval(&e);
        let s_in = fs >= 0.0;
        let e_in = fe >= 0.0;
        if s_in {
            out.push(s);
        }
        if s_in != e_in {
            let t = fs / (fs - fe);
            out.push(s + (e - s) * t);
        }
    }
    dedup_ring(&mut out);
    out
}

/// Splits a convex polygon by the line `a·x + b·y + c = 0` into the
/// non-negative and non-positive sides. Empty sides come back empty.
pub fn split_convex(poly: &[Point2<f64>], a: f64, b: f64, c: f64) -> (Vec<Point2<f64>>, Vec<Point2<f64>>) {
    let pos = clip_halfplane(poly, a, b, c);
    let neg = clip_halfplane(poly, -a, -b, -c);
    let keep = |v: Vec<Point2<f64>>| if area(&v) > EMPTY_AREA { v } else { Vec::new() };
    (keep(pos), keep(neg))
}

/// Intersection of a polygon with a convex counter-clockwise clip polygon.
pub fn clip_convex(subject: &[Point2<f64>], clip: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut out = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let p = clip[i];
        let q = clip[(i + 1) % n];
        // left of p→q: (q - p) × (x - p) >= 0
        let a = -(q.y - p.y);
        let b = q.x - p.x;
        let c = -(a * p.x + b * p.y);
        out = clip_halfplane(&out, a, b, c);
    }
    if area(&out) > EMPTY_AREA {
        out
    } else {
        Vec::new()
    }
}

/// Area of the intersection of two convex polygons given in one 2D frame.
pub fn convex_intersection_area(a: &[Point2<f64>], b: &[Point2<f64>]) -> f64 {
    if a.len() < 3 || b.len() < 3 {
        return 0.0;
    }
    let clip = ccw(b);
    area(&clip_convex(a, &clip))
}

fn ccw(pts: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut v = pts.to_vec();
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    v
}

fn dedup_ring(pts: &mut Vec<Point2<f64>>) {
    pts.dedup_by(|a, b| (*a - *b).norm() < 1e-15);
    while pts.len() > 1 && (pts[0] - pts[pts.len() - 1]).norm() < 1e-15 {
        pts.pop();
    }
}

/// A polygon lying in a plane, stored as counter-clockwise 2D vertices in the
/// plane's [`PlaneFrame`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarPolygon {
    plane: Plane,
    frame: PlaneFrame,
    vertices: Vec<Point2<f64>>,
}

impl PlanarPolygon {
    /// Vertices are reordered to counter-clockwise if needed.
    pub fn new(plane: Plane, frame: PlaneFrame, vertices: Vec<Point2<f64>>) -> Self {
        let vertices = ccw(&vertices);
        Self { plane, frame, vertices }
    }

    /// Projects 3D points into the plane's canonical frame.
    pub fn from_points(plane: Plane, points: &[Vector3<f64>]) -> Self {
        let frame = plane.frame();
        let verts = points.iter().map(|p| frame.to_local(p)).collect();
        Self::new(plane, frame, verts)
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn frame(&self) -> &PlaneFrame {
        &self.frame
    }

    pub fn vertices(&self) -> &[Point2<f64>] {
        &self.vertices
    }

    pub fn vertices_3d(&self) -> Vec<Vector3<f64>> {
        self.vertices.iter().map(|p| self.frame.lift(p)).collect()
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        area(&self.vertices)
    }

    pub fn centroid_3d(&self) -> Vector3<f64> {
        self.frame.lift(&centroid(&self.vertices))
    }

    pub fn is_convex(&self) -> bool {
        is_convex(&self.vertices)
    }

    /// Rigidly moves the polygon; the result is expressed in the transformed
    /// plane's canonical frame.
    pub fn transform(&self, pose: &Pose) -> PlanarPolygon {
        let plane = self.plane.transform(pose);
        let pts: Vec<_> = self.vertices_3d().iter().map(|p| pose.transform_point(p)).collect();
        PlanarPolygon::from_points(plane, &pts)
    }
}

/// Orthogonally projects `src`'s vertices onto `dst`'s plane, in `dst`'s frame.
///
/// Fails with `NearPerpendicular` when the planes are more than 60° apart.
pub fn project_patch(src: &PlanarPolygon, dst: &PlanarPolygon) -> Result<PlanarPolygon, GeometryError> {
    let angle = src.plane().angle_to(dst.plane()).to_degrees();
    if angle > tol::MAX_PROJECTION_ANGLE_DEG {
        return Err(GeometryError::NearPerpendicular(angle));
    }
    let frame = *dst.frame();
    let verts = src.vertices_3d().iter().map(|p| frame.to_local(p)).collect();
    Ok(PlanarPolygon::new(*dst.plane(), frame, verts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x: f64, y: f64, s: f64) -> Vec<Point2<f64>> {
        vec![Point2::new(x, y), Point2::new(x + s, y), Point2::new(x + s, y + s), Point2::new(x, y + s)]
    }

    #[test]
    fn intersection_area_examples() {
        let a = square(0.0, 0.0, 1.0);
        assert!((convex_intersection_area(&a, &a) - 1.0).abs() < 1e-15);
        assert!((convex_intersection_area(&a, &square(0.5, 0.0, 1.0)) - 0.5).abs() < 1e-15);
        assert_eq!(convex_intersection_area(&a, &square(2.0, 0.0, 1.0)), 0.0);
        assert_eq!(convex_intersection_area(&a, &square(1.0, 0.0, 1.0)), 0.0);
        let mut cw = square(0.5, 0.5, 1.0);
        cw.reverse();
        assert!((convex_intersection_area(&a, &cw) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn split_preserves_area() {
        let a = square(0.0, 0.0, 2.0);
        let (p, n) = split_convex(&a, 1.0, 1.0, -1.0);
        assert!((area(&p) + area(&n) - 4.0).abs() < 1e-12);
        assert!((area(&n) - 0.5).abs() < 1e-12);
        let (p, n) = split_convex(&a, 1.0, 0.0, 5.0);
        assert!((area(&p) - 4.0).abs() < 1e-12);
        assert!(n.is_empty());
    }

    #[test]
    fn convexity_and_centroid() {
        let a = square(1.0, 1.0, 2.0);
        assert!(is_convex(&a));
        assert!((centroid(&a) - Point2::new(2.0, 2.0)).norm() < 1e-12);
        let notch = vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(1.0, 0.5),
            Point2::new(2.0, 2.0),
            Point2::new(0.0, 2.0),
        ];
        assert!(!is_convex(&notch));
    }

    fn wall(normal: Vector3<f64>, offset: f64) -> PlanarPolygon {
        let plane = Plane::new(normal, offset).unwrap();
        PlanarPolygon::new(plane, plane.frame(), square(-1.0, -1.0, 2.0))
    }

    #[test]
    fn projection_coplanar_preserves_area() {
        let a = wall(Vector3::x(), 2.0);
        let b = wall(Vector3::x(), 2.0);
        let p = project_patch(&a, &b).unwrap();
        assert!((p.area() - a.area()).abs() < 1e-9);
    }

    #[test]
    fn projection_foreshortens_by_cosine() {
        let t = 60f64.to_radians();
        let a = wall(Vector3::new(t.cos(), 0.0, t.sin()), 1.0);
        let b = wall(Vector3::x(), 1.0);
        let p = project_patch(&a, &b).unwrap();
        assert!((p.area() - a.area() * 0.5).abs() < 1e-9);
        let steep = wall(Vector3::new(0.4, 0.0, 0.9), 1.0);
        assert!(matches!(project_patch(&steep, &b), Err(GeometryError::NearPerpendicular(_))));
    }

    #[test]
    fn antipodal_projection_stays_ccw() {
        // same plane through the origin seen with flipped normal
        let plane = Plane::new(Vector3::x(), 0.0).unwrap();
        let a = PlanarPolygon::new(plane, plane.frame(), square(0.0, 0.0, 1.0));
        let flipped_frame = PlaneFrame { u: -plane.frame().u, normal: -plane.frame().normal, ..plane.frame() };
        let b = PlanarPolygon::new(plane, flipped_frame, square(0.0, 0.0, 1.0));
        let p = project_patch(&a, &b).unwrap();
        assert!(p.signed_area() > 0.0);
    }
}
