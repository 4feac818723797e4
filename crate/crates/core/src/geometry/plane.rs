use nalgebra::{Point2, Vector3};
use serde::{Deserialize, Serialize};

use super::{tol, GeometryError, Pose};

/// An oriented plane `normal · x + offset = 0` in canonical form.
///
/// Serialized as the 4-vector `[nx, ny, nz, d]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct Plane {
    normal: Vector3<f64>,
    offset: f64,
}

impl Plane {
    /// Normalizes a raw 4-vector and picks the canonical sign.
    ///
    /// Idempotent bit-for-bit: an already canonical input is returned
    /// unchanged.
    pub fn canonicalize(raw: [f64; 4]) -> Result<Self, GeometryError> {
        let n = Vector3::new(raw[0], raw[1], raw[2]);
        let norm = n.norm();
        if !(norm >= tol::DEGENERATE_NORMAL) || !raw[3].is_finite() {
            return Err(GeometryError::DegeneratePlane);
        }
        // Re-dividing a unit vector by its (rounded) norm would perturb the
        // last bit, so leave near-unit vectors alone.
        let (mut normal, mut offset) =
            if (norm - 1.0).abs() <= 4.0 * f64::EPSILON { (n, raw[3]) } else { (n / norm, raw[3] / norm) };
        let flip = if offset.abs() < tol::ZERO_OFFSET {
            normal.iter().find(|c| c.abs() > tol::DEGENERATE_NORMAL).is_some_and(|&c| c < 0.0)
        } else {
            offset < 0.0
        };
        if flip {
            normal = -normal;
            offset = -offset;
        }
        Ok(Self { normal, offset })
    }

    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self, GeometryError> {
        Self::canonicalize([normal.x, normal.y, normal.z, offset])
    }

    /// Plane through `point` with the given normal direction.
    pub fn from_point_normal(point: &Vector3<f64>, normal: &Vector3<f64>) -> Result<Self, GeometryError> {
        let n = normal.normalize();
        Self::new(n, -n.dot(point))
    }

    pub fn normal(&self) -> &Vector3<f64> {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.normal.x, self.normal.y, self.normal.z, self.offset]
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }

    /// Closest point on the plane to `p`.
    pub fn project_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.normal * self.signed_distance(p)
    }

    /// Unsigned angle between the two planes in radians, in `[0, π/2]`.
    pub fn angle_to(&self, other: &Plane) -> f64 {
        self.normal.dot(&other.normal).abs().min(1.0).acos()
    }

    /// Maps a plane expressed in `pose`'s source frame into its target frame.
    pub fn transform(&self, pose: &Pose) -> Plane {
        let n = pose.transform_vector(&self.normal);
        let d = self.offset - n.dot(pose.translation());
        Plane::canonicalize([n.x, n.y, n.z, d]).expect("rotation preserves unit normals")
    }

    /// The plane's canonical in-plane coordinate frame.
    pub fn frame(&self) -> PlaneFrame {
        PlaneFrame::for_plane(self)
    }
}

impl From<Plane> for [f64; 4] {
    fn from(p: Plane) -> Self {
        p.to_array()
    }
}

impl TryFrom<[f64; 4]> for Plane {
    type Error = GeometryError;

    fn try_from(raw: [f64; 4]) -> Result<Self, Self::Error> {
        Plane::canonicalize(raw)
    }
}

/// Orthonormal 2D coordinate system embedded in a plane.
///
/// `u × v = normal`, so counter-clockwise in `(u, v)` is counter-clockwise
/// when viewed from the side the normal points to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFrame {
    pub origin: Vector3<f64>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl PlaneFrame {
    /// Origin at the point closest to the world origin. `v` follows world up
    /// projected into the plane for non-horizontal planes, world x otherwise.
    pub fn for_plane(plane: &Plane) -> Self {
        let n = *plane.normal();
        let up = Vector3::z();
        let reference = if n.dot(&up).abs() < 0.99 { up } else { Vector3::x() };
        let v = (reference - n * n.dot(&reference)).normalize();
        let u = v.cross(&n);
        Self { origin: -n * plane.offset(), u, v, normal: n }
    }

    pub fn lift(&self, p: &Point2<f64>) -> Vector3<f64> {
        self.origin + self.u * p.x + self.v * p.y
    }

    /// In-plane coordinates of the orthogonal projection of `p`.
    pub fn to_local(&self, p: &Vector3<f64>) -> Point2<f64> {
        let r = p - self.origin;
        Point2::new(r.dot(&self.u), r.dot(&self.v))
    }
}

/// Infinite 3D line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line3 {
    pub point: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Line3 {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.point + self.direction * t
    }
}

/// Line shared by two non-parallel planes.
///
/// The returned point is the point of the line closest to the origin.
pub fn intersect_planes(p1: &Plane, p2: &Plane) -> Result<Line3, GeometryError> {
    let n1 = p1.normal();
    let n2 = p2.normal();
    let cross = n1.cross(n2);
    let sq = cross.norm_squared();
    if sq.sqrt() < tol::PARALLEL_PLANES {
        return Err(GeometryError::ParallelPlanes);
    }
    let h1 = -p1.offset();
    let h2 = -p2.offset();
    let point = (n2.cross(&cross) * h1 + cross.cross(n1) * h2) / sq;
    Ok(Line3 { point, direction: cross / sq.sqrt() })
}
