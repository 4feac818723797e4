//! Candidate wall segments from the arrangement of room planes, and the
//! floor/ceiling rule.

use nalgebra::{Point2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::PlaneCluster;
use crate::geometry::polygon::{self, split_convex};
use crate::geometry::{PlanarPolygon, Plane};
use crate::measurements::GlobalMeasurement;

/// Wall planes closer than this (degrees) do not cut each other.
pub const MIN_CUT_ANGLE_DEG: f64 = 2.0;
/// Cells smaller than this (m²) are discarded as numerical slivers.
const MIN_CELL_AREA: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CandidateError {
    #[error("no measurements to bound the scene")]
    NoMeasurements,
    #[error("scene bounds are degenerate")]
    DegenerateBounds,
    #[error("no wall plane crosses the scene bounds between floor and ceiling")]
    EmptyArrangement,
    #[error("at least one wall plane is required")]
    NoWalls,
    #[error("floor and ceiling coincide")]
    FloorEqualsCeiling,
    #[error("no floor/ceiling cluster")]
    NoHorizontalCluster,
    #[error("dominant floor/ceiling normal is not horizontal (|n·up| = {0:.3})")]
    AmbiguousNormal(f64),
}

/// Axis-aligned scene box in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SceneBounds {
    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|a| !(self.min[a] < self.max[a]))
    }

    pub fn contains(&self, p: &Vector3<f64>, slack: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - slack && p[a] <= self.max[a] + slack)
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn diagonal(&self) -> f64 {
        (0..3).map(|a| (self.max[a] - self.min[a]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn inflate(&self, margin: f64) -> SceneBounds {
        SceneBounds { min: self.min.map(|v| v - margin), max: self.max.map(|v| v + margin) }
    }
}

/// Axis-aligned box of all patch vertices, grown by `margin` on every side.
pub fn scene_bounds(measurements: &[GlobalMeasurement], margin: f64) -> Result<SceneBounds, CandidateError> {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for m in measurements {
        for v in m.patch_world.vertices_3d() {
            for a in 0..3 {
                min[a] = min[a].min(v[a]);
                max[a] = max[a].max(v[a]);
            }
        }
    }
    if measurements.is_empty() {
        return Err(CandidateError::NoMeasurements);
    }
    Ok(SceneBounds { min, max }.inflate(margin))
}

/// A convex cell of a room plane awaiting a vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSegment {
    /// Index of the wall plane this cell lies on.
    pub cluster_id: usize,
    /// Index of the cell among the plane's cells.
    pub cell_index: usize,
    pub polygon: PlanarPolygon,
    /// Final energy (zero until voted).
    pub energy: f64,
    pub inliers: usize,
    pub voters_total: usize,
    pub accepted: bool,
}

/// `plane ∩ bounds` as a convex polygon in the plane's frame.
pub fn plane_section(plane: &Plane, bounds: &SceneBounds) -> Option<PlanarPolygon> {
    let frame = plane.frame();
    let c = frame.to_local(&bounds.center());
    let h = bounds.diagonal().max(1.0);
    let mut poly = vec![
        Point2::new(c.x - h, c.y - h),
        Point2::new(c.x + h, c.y - h),
        Point2::new(c.x + h, c.y + h),
        Point2::new(c.x - h, c.y + h),
    ];
    for a in 0..3 {
        let (ua, va, oa) = (frame.u[a], frame.v[a], frame.origin[a]);
        poly = polygon::clip_halfplane(&poly, ua, va, oa - bounds.min[a]);
        poly = polygon::clip_halfplane(&poly, -ua, -va, bounds.max[a] - oa);
    }
    (polygon::area(&poly) > MIN_CELL_AREA).then(|| PlanarPolygon::new(*plane, frame, poly))
}

/// Line `a·x + b·y + c = 0` in `host`'s frame where `cutter` crosses it.
fn cut_line(host: &PlanarPolygon, cutter: &Plane) -> (f64, f64, f64) {
    let f = host.frame();
    let n = cutter.normal();
    (n.dot(&f.u), n.dot(&f.v), n.dot(&f.origin) + cutter.offset())
}

/// Half-plane of `host` on the positive side of `cutter` oriented by `dir`.
fn side(host: &PlanarPolygon, cutter: &Plane, dir: f64) -> (f64, f64, f64) {
    let (a, b, c) = cut_line(host, cutter);
    (dir * a, dir * b, dir * c)
}

/// Cuts every wall plane by the other walls into convex cells lying between
/// floor and ceiling. `cluster_id` of each cell is the index of its plane in
/// `walls`.
pub fn generate_candidates(
    walls: &[Plane],
    floor: &Plane,
    ceiling: &Plane,
    bounds: &SceneBounds,
    up: &Vector3<f64>,
) -> Result<Vec<CandidateSegment>, CandidateError> {
    if walls.is_empty() {
        return Err(CandidateError::NoWalls);
    }
    if bounds.is_degenerate() {
        return Err(CandidateError::DegenerateBounds);
    }
    if floor == ceiling {
        return Err(CandidateError::FloorEqualsCeiling);
    }
    // keep the side of the floor its upward normal points to, and the side
    // of the ceiling its downward normal points to
    let floor_dir = floor.normal().dot(up).signum();
    let ceiling_dir = -ceiling.normal().dot(up).signum();

    let mut out = Vec::new();
    for (i, wall) in walls.iter().enumerate() {
        let Some(base) = plane_section(wall, bounds) else { continue };
        let mut cell = base.vertices().to_vec();
        for (plane, dir) in [(floor, floor_dir), (ceiling, ceiling_dir)] {
            let (a, b, c) = side(&base, plane, dir);
            cell = polygon::clip_halfplane(&cell, a, b, c);
        }
        if polygon::area(&cell) <= MIN_CELL_AREA {
            continue;
        }
        let mut cells = vec![cell];
        for (j, other) in walls.iter().enumerate() {
            if j == i || wall.angle_to(other).to_degrees() < MIN_CUT_ANGLE_DEG {
                continue;
            }
            let (a, b, c) = cut_line(&base, other);
            let mut next = Vec::with_capacity(cells.len() + 1);
            for cell in cells {
                let (pos, neg) = split_convex(&cell, a, b, c);
                next.extend([pos, neg].into_iter().filter(|p| polygon::area(p) > MIN_CELL_AREA));
            }
            cells = next;
        }
        let mut keyed: Vec<(Point2<f64>, Vec<Point2<f64>>)> =
            cells.into_iter().map(|c| (polygon::centroid(&c), c)).collect();
        keyed.sort_by(|a, b| a.0.x.total_cmp(&b.0.x).then(a.0.y.total_cmp(&b.0.y)));
        for (cell_index, (_, verts)) in keyed.into_iter().enumerate() {
            out.push(CandidateSegment {
                cluster_id: i,
                cell_index,
                polygon: PlanarPolygon::new(*wall, *base.frame(), verts),
                energy: 0.0,
                inliers: 0,
                voters_total: 0,
                accepted: false,
            });
        }
    }
    if out.is_empty() {
        return Err(CandidateError::EmptyArrangement);
    }
    Ok(out)
}

/// Floor and ceiling from the heaviest floor/ceiling cluster.
///
/// An upward normal marks the floor and a ceiling is placed `gap` metres
/// above it facing down; a downward normal marks the ceiling and the floor is
/// placed `gap` below it.
pub fn infer_floor_ceiling(
    fc_clusters: &[PlaneCluster],
    gap: f64,
    up: &Vector3<f64>,
) -> Result<(Plane, Plane), CandidateError> {
    let dominant = fc_clusters
        .iter()
        .max_by(|a, b| a.weight.total_cmp(&b.weight).then(b.id.cmp(&a.id)))
        .ok_or(CandidateError::NoHorizontalCluster)?;
    floor_ceiling_from_plane(&dominant.plane, gap, up)
}

pub fn floor_ceiling_from_plane(plane: &Plane, gap: f64, up: &Vector3<f64>) -> Result<(Plane, Plane), CandidateError> {
    let n = *plane.normal();
    let d = plane.offset();
    let nz = n.dot(up);
    if nz.abs() < 0.5 {
        return Err(CandidateError::AmbiguousNormal(nz.abs()));
    }
    // translating the plane by s·up turns d into d - s·(n·up)
    let shifted = |s: f64| {
        let raw = -n;
        Plane::canonicalize([raw.x, raw.y, raw.z, -(d - s * nz)]).expect("unit normal")
    };
    if nz > 0.0 {
        Ok((*plane, shifted(gap)))
    } else {
        Ok((shifted(-gap), *plane))
    }
}

/// Horizontal floor and ceiling planes from explicit heights.
pub fn floor_ceiling_from_heights(floor_z: f64, height: f64) -> (Plane, Plane) {
    let floor = Plane::new(Vector3::z(), -floor_z).expect("unit normal");
    let ceiling = Plane::new(-Vector3::z(), floor_z + height).expect("unit normal");
    (floor, ceiling)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(n: [f64; 3], d: f64) -> Plane {
        Plane::new(Vector3::from(n), d).unwrap()
    }

    fn cluster(p: Plane, w: f64, id: usize) -> PlaneCluster {
        PlaneCluster { id, weight: w, mean: [0.0; 4], variance: [1.0; 4], members: vec![], plane: p }
    }

    fn room_bounds() -> SceneBounds {
        SceneBounds { min: [-3.0, -3.0, -0.5], max: [3.0, 3.0, 3.0] }
    }

    fn band() -> (Plane, Plane) {
        floor_ceiling_from_heights(0.0, 2.5)
    }

    #[test]
    fn floor_rule_places_ceiling_two_metres_above() {
        let floor = plane([0.0, 0.0, 1.0], 0.0);
        let (f, c) = infer_floor_ceiling(&[cluster(floor, 0.8, 0)], 2.0, &Vector3::z()).unwrap();
        assert_eq!(f, floor);
        assert_eq!(c.to_array(), [0.0, 0.0, -1.0, 2.0]);
    }

    #[test]
    fn ceiling_rule_places_floor_below() {
        let ceil = plane([0.0, 0.0, -1.0], 2.4);
        let (f, c) = infer_floor_ceiling(&[cluster(ceil, 0.6, 0)], 2.0, &Vector3::z()).unwrap();
        assert_eq!(c, ceil);
        // z = 0.4
        assert!(f.signed_distance(&Vector3::new(3.0, -1.0, 0.4)).abs() < 1e-12);
        assert!((f.normal().z.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dominant_cluster_drives_rule() {
        let floor = plane([0.0, 0.0, 1.0], 1.0);
        let ceil = plane([0.0, 0.0, -1.0], 1.5);
        let (f, _) = infer_floor_ceiling(&[cluster(ceil, 0.3, 0), cluster(floor, 0.7, 1)], 2.0, &Vector3::z()).unwrap();
        assert_eq!(f, floor);
        assert_eq!(infer_floor_ceiling(&[], 2.0, &Vector3::z()), Err(CandidateError::NoHorizontalCluster));
        let wallish = cluster(plane([1.0, 0.0, 0.0], 1.0), 1.0, 0);
        assert!(matches!(infer_floor_ceiling(&[wallish], 2.0, &Vector3::z()), Err(CandidateError::AmbiguousNormal(_))));
    }

    #[test]
    fn single_wall_gives_one_band_cell() {
        let (f, c) = band();
        let cands = generate_candidates(&[plane([1.0, 0.0, 0.0], 2.0)], &f, &c, &room_bounds(), &Vector3::z()).unwrap();
        assert_eq!(cands.len(), 1);
        // 6 m wide (y from -3 to 3) by 2.5 m tall
        assert!((cands[0].polygon.area() - 15.0).abs() < 1e-9);
        for v in cands[0].polygon.vertices_3d() {
            assert!(v.z > -1e-9 && v.z < 2.5 + 1e-9);
        }
    }

    #[test]
    fn perpendicular_walls_split_each_other() {
        let (f, c) = band();
        let walls = [plane([1.0, 0.0, 0.0], 1.0), plane([0.0, 1.0, 0.0], 1.0)];
        let cands = generate_candidates(&walls, &f, &c, &room_bounds(), &Vector3::z()).unwrap();
        assert_eq!(cands.iter().filter(|c| c.cluster_id == 0).count(), 2);
        assert_eq!(cands.iter().filter(|c| c.cluster_id == 1).count(), 2);
    }

    #[test]
    fn rectangle_room_yields_twelve_cells() {
        let (f, c) = band();
        let walls = [
            plane([1.0, 0.0, 0.0], 2.0),
            plane([-1.0, 0.0, 0.0], 2.0),
            plane([0.0, 1.0, 0.0], 2.0),
            plane([0.0, -1.0, 0.0], 2.0),
        ];
        let cands = generate_candidates(&walls, &f, &c, &room_bounds(), &Vector3::z()).unwrap();
        assert_eq!(cands.len(), 12);
        for i in 0..4 {
            assert_eq!(cands.iter().filter(|c| c.cluster_id == i).count(), 3);
        }
    }

    #[test]
    fn plane_outside_bounds_is_empty() {
        let (f, c) = band();
        let far = plane([1.0, 0.0, 0.0], 10.0);
        assert_eq!(
            generate_candidates(&[far], &f, &c, &room_bounds(), &Vector3::z()),
            Err(CandidateError::EmptyArrangement)
        );
        let flat = SceneBounds { min: [0.0; 3], max: [1.0, 1.0, 0.0] };
        assert_eq!(generate_candidates(&[far], &f, &c, &flat, &Vector3::z()), Err(CandidateError::DegenerateBounds));
        assert_eq!(
            generate_candidates(&[far], &f, &f, &room_bounds(), &Vector3::z()),
            Err(CandidateError::FloorEqualsCeiling)
        );
    }

    #[test]
    fn near_parallel_walls_do_not_cut() {
        let (f, c) = band();
        let t = 1f64.to_radians();
        let walls = [plane([1.0, 0.0, 0.0], 1.0), plane([t.cos(), t.sin(), 0.0], 1.5)];
        let cands = generate_candidates(&walls, &f, &c, &room_bounds(), &Vector3::z()).unwrap();
        assert_eq!(cands.len(), 2);
    }
}
