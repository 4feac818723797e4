//! Planes, poses, pinhole projection and planar polygons.
//!
//! Every surface in the system is a [`Plane`] `n · x + d = 0` with a unit
//! normal. Planes are always held in canonical form (`d >= 0`, lexicographic
//! tie-break at `d = 0`) so the antipodal pair `(n, d)` / `(-n, -d)` maps to a
//! single value.

mod camera;
mod plane;
pub mod polygon;
mod pose;

pub use camera::{backproject_pixel, bbox_to_patch, BBox, Intrinsics};
pub use plane::{intersect_planes, Line3, Plane, PlaneFrame};
pub use polygon::{convex_intersection_area, project_patch, PlanarPolygon};
pub use pose::Pose;

use thiserror::Error;

/// Numerical tolerances shared by the geometry routines.
pub mod tol {
    /// Below this norm a plane normal is considered zero.
    pub const DEGENERATE_NORMAL: f64 = 1e-12;
    /// `|d|` below this is treated as a plane through the origin.
    pub const ZERO_OFFSET: f64 = 1e-12;
    /// `|n · r|` below this means a ray is parallel to a plane.
    pub const RAY_PARALLEL: f64 = 1e-9;
    /// `|n1 × n2|` below this means two planes are parallel.
    pub const PARALLEL_PLANES: f64 = 1e-6;
    /// Smallest accepted patch area, m².
    pub const MIN_PATCH_AREA: f64 = 1e-8;
    /// Largest normal angle (degrees) for which orthogonal projection of one
    /// patch onto another plane is still meaningful.
    pub const MAX_PROJECTION_ANGLE_DEG: f64 = 60.0;
    /// Residual bound for points constructed to lie on a plane.
    pub const ON_PLANE: f64 = 1e-6;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate plane: normal has zero length")]
    DegeneratePlane,
    #[error("ray is parallel to the plane")]
    RayParallel,
    #[error("plane intersection lies behind the camera")]
    BehindCamera,
    #[error("degenerate patch with area {0:.3e} m²")]
    DegeneratePatch(f64),
    #[error("planes are parallel")]
    ParallelPlanes,
    #[error("planes are {0:.1}° apart, too steep to project")]
    NearPerpendicular(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
}
