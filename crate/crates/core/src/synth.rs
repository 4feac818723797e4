//! Synthetic rooms, camera trajectories and noisy per-frame plane
//! detections with exact ground truth.
//!
//! A room is a footprint polygon extruded between a floor and a ceiling.
//! Every footprint edge becomes one wall whose normal points into the room.
//! Cameras move inside the footprint; each surface whose true extent survives
//! frustum clipping with at least [`MIN_PROJECTED_AREA`] pixels yields one
//! detection (no inter-surface occlusion is modelled).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Point2, Rotation3, Unit, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::SceneBounds;
use crate::geometry::{bbox_to_patch, polygon, BBox, Intrinsics, PlanarPolygon, Plane, Pose};
use crate::layout::{RoomLayout, WallSegment};
use crate::measurements::{FrameId, Klass, Measurement, SequenceBundle};
use crate::metrics::hungarian;

/// Smallest visible image area, px², for a surface to be detected.
pub const MIN_PROJECTED_AREA: f64 = 100.0;
/// Near clipping distance, metres.
pub const NEAR_PLANE: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid footprint: {0}")]
    InvalidFootprint(String),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("camera of frame {frame} at ({x:.3}, {y:.3}, {z:.3}) is outside the room")]
    CameraOutsideRoom { frame: FrameId, x: f64, y: f64, z: f64 },
}

/// Extruded floor plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoomSpec {
    /// Footprint vertices `[x, y]`, metres.
    pub footprint: Vec<[f64; 2]>,
    /// Floor height, metres.
    pub floor_z: f64,
    /// Floor-to-ceiling distance, metres.
    pub height: f64,
}

impl Default for RoomSpec {
    fn default() -> Self {
        Self::rectangle(6.0, 4.0, -1.5, 3.0)
    }
}

fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn orient(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> f64 {
    cross2(b - a, c - a)
}

fn on_segment(a: Point2<f64>, b: Point2<f64>, p: Point2<f64>) -> bool {
    p.x >= a.x.min(b.x) - 1e-12
        && p.x <= a.x.max(b.x) + 1e-12
        && p.y >= a.y.min(b.y) - 1e-12
        && p.y <= a.y.max(b.y) + 1e-12
}

fn segments_touch(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>, d: Point2<f64>) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// Strict point-in-polygon test (points on the boundary are outside).
pub fn point_in_polygon(pts: &[Point2<f64>], p: Point2<f64>) -> bool {
    let n = pts.len();
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        if orient(a, b, p).abs() < 1e-12 && on_segment(a, b, p) {
            return false;
        }
    }
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        if (a.y > p.y) != (b.y > p.y) && p.x < a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x) {
            inside = !inside;
        }
    }
    inside
}

/// Ear-clipping triangulation of a simple CCW polygon.
pub fn triangulate(pts: &[Point2<f64>]) -> Vec<[usize; 3]> {
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    let mut out = Vec::with_capacity(pts.len().saturating_sub(2));
    while idx.len() > 3 {
        let n = idx.len();
        let ear = (0..n).find(|&i| {
            let (a, b, c) = (idx[(i + n - 1) % n], idx[i], idx[(i + 1) % n]);
            if orient(pts[a], pts[b], pts[c]) <= 0.0 {
                return false;
            }
            idx.iter().all(|&j| {
                j == a || j == b || j == c || {
                    let p = pts[j];
                    !(orient(pts[a], pts[b], p) >= 0.0
                        && orient(pts[b], pts[c], p) >= 0.0
                        && orient(pts[c], pts[a], p) >= 0.0)
                }
            })
        });
        // a valid simple polygon always has an ear; fall back defensively
        let i = ear.unwrap_or(0);
        out.push([idx[(i + n - 1) % n], idx[i], idx[(i + 1) % n]]);
        idx.remove(i);
    }
    if idx.len() == 3 {
        out.push([idx[0], idx[1], idx[2]]);
    }
    out
}

impl RoomSpec {
    /// Axis-aligned rectangle centred on the origin.
    pub fn rectangle(width: f64, depth: f64, floor_z: f64, height: f64) -> Self {
        let (w, d) = (width / 2.0, depth / 2.0);
        Self { footprint: vec![[-w, -d], [w, -d], [w, d], [-w, d]], floor_z, height }
    }

    pub fn points(&self) -> Vec<Point2<f64>> {
        self.footprint.iter().map(|p| Point2::new(p[0], p[1])).collect()
    }

    /// Validated copy: duplicate and collinear vertices removed, vertices
    /// counter-clockwise.
    pub fn validate(&self) -> Result<RoomSpec, SynthError> {
        let bad = |s: &str| Err(SynthError::InvalidFootprint(s.into()));
        if self.footprint.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite vertex");
        }
        if !self.floor_z.is_finite() || !(self.height > 1.5 && self.height < 5.0) {
            return Err(SynthError::InvalidSpec(format!("height {} outside (1.5, 5) m", self.height)));
        }
        let mut pts = self.points();
        pts.dedup_by(|a, b| (*a - *b).norm() < 1e-9);
        while pts.len() > 1 && (pts[0] - pts[pts.len() - 1]).norm() < 1e-9 {
            pts.pop();
        }
        // drop vertices between collinear edges until none remain
        loop {
            let n = pts.len();
            if n < 3 {
                return bad("fewer than 3 distinct vertices");
            }
            let drop = (0..n).find(|&i| {
                let (a, b, c) = (pts[(i + n - 1) % n], pts[i], pts[(i + 1) % n]);
                let (e1, e2) = (b - a, c - b);
                cross2(e1, e2).abs() <= 1e-9 * e1.norm() * e2.norm() && e1.dot(&e2) > 0.0
            });
            match drop {
                Some(i) => {
                    pts.remove(i);
                }
                None => break,
            }
        }
        let n = pts.len();
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    // adjacent edges may only share their common vertex
                    let (a, b, c) =
                        if j == i + 1 { (pts[i], pts[j], pts[(j + 1) % n]) } else { (pts[j], pts[0], pts[1]) };
                    if orient(a, b, c).abs() <= 1e-12 && (b - a).dot(&(c - b)) < 0.0 {
                        return bad("edge folds back on itself");
                    }
                    continue;
                }
                if segments_touch(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]) {
                    return bad("footprint is not simple");
                }
            }
        }
        if polygon::signed_area(&pts) < 0.0 {
            pts.reverse();
        }
        if polygon::area(&pts) < 1.0 - 1e-12 {
            return bad("area must be at least 1 m²");
        }
        Ok(RoomSpec { footprint: pts.iter().map(|p| [p.x, p.y]).collect(), floor_z: self.floor_z, height: self.height })
    }

    pub fn ceiling_z(&self) -> f64 {
        self.floor_z + self.height
    }

    pub fn bounds(&self) -> SceneBounds {
        let mut min = [f64::INFINITY, f64::INFINITY, self.floor_z];
        let mut max = [f64::NEG_INFINITY, f64::NEG_INFINITY, self.ceiling_z()];
        for p in &self.footprint {
            for a in 0..2 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        SceneBounds { min, max }
    }
}

/// Ground-truth wall: one per footprint edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueWall {
    /// Canonical plane.
    pub plane: Plane,
    /// Unit normal pointing into the room.
    pub inward_normal: Vector3<f64>,
    /// Edge endpoints in the footprint.
    pub edge: [[f64; 2]; 2],
    /// Edge × height rectangle.
    pub extent: PlanarPolygon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomPlanes {
    pub walls: Vec<TrueWall>,
    /// Floor plane; its inward normal is +z.
    pub floor: Plane,
    /// Ceiling plane; its inward normal is −z.
    pub ceiling: Plane,
}

pub fn room_planes(spec: &RoomSpec) -> Result<RoomPlanes, SynthError> {
    let spec = spec.validate()?;
    let pts = spec.points();
    let n = pts.len();
    let (z0, z1) = (spec.floor_z, spec.ceiling_z());
    let walls = (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            let e = (b - a).normalize();
            // left of a CCW edge is inside
            let inward = Vector3::new(-e.y, e.x, 0.0);
            let p0 = Vector3::new(a.x, a.y, z0);
            let raw = [inward.x, inward.y, 0.0, -inward.dot(&p0)];
            let plane = Plane::canonicalize(raw).map_err(|_| SynthError::InvalidFootprint("degenerate edge".into()))?;
            let corners = [
                Vector3::new(a.x, a.y, z0),
                Vector3::new(b.x, b.y, z0),
                Vector3::new(b.x, b.y, z1),
                Vector3::new(a.x, a.y, z1),
            ];
            Ok(TrueWall {
                plane,
                inward_normal: inward,
                edge: [[a.x, a.y], [b.x, b.y]],
                extent: PlanarPolygon::from_points(plane, &corners),
            })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    let floor = Plane::new(Vector3::z(), -z0).expect("unit normal");
    let ceiling = Plane::new(-Vector3::z(), z1).expect("unit normal");
    Ok(RoomPlanes { walls, floor, ceiling })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Normal perturbation scale, degrees.
    pub sigma_normal_deg: f64,
    /// Offset perturbation scale, metres.
    pub sigma_d_m: f64,
    /// Bounding-box corner jitter, pixels.
    pub sigma_bbox_px: f64,
    /// Probability of dropping each detection.
    pub p_dropout: f64,
    /// Per-frame probability of one spurious detection.
    pub p_spurious: f64,
    /// Draw perturbations from a Student-t instead of a normal.
    pub heavy_tail: bool,
    /// Degrees of freedom of the heavy-tailed distribution.
    pub dof: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_normal_deg: 0.0,
            sigma_d_m: 0.0,
            sigma_bbox_px: 0.0,
            p_dropout: 0.0,
            p_spurious: 0.0,
            heavy_tail: false,
            dof: 3.0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let s = [self.sigma_normal_deg, self.sigma_d_m, self.sigma_bbox_px];
        if s.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(SynthError::InvalidSpec("noise scales must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.p_dropout) || !(0.0..1.0).contains(&self.p_spurious) {
            // dropout of exactly one is allowed: it empties the sequence
            if !(self.p_dropout == 1.0 && (0.0..1.0).contains(&self.p_spurious)) {
                return Err(SynthError::InvalidSpec("probabilities must lie in [0, 1)".into()));
            }
        }
        if self.heavy_tail && !(self.dof > 0.0) {
            return Err(SynthError::InvalidSpec("degrees of freedom must be positive".into()));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
        let z = if self.heavy_tail {
            StudentT::new(self.dof).expect("validated").sample(rng)
        } else {
            Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
        };
        sigma * z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryMode {
    /// Circle around `center`, yawing steadily while the pitch oscillates.
    Orbit,
    /// Random steps inside the footprint with random heading and pitch.
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySpec {
    pub mode: TrajectoryMode,
    pub frames: usize,
    pub seed: u64,
    /// Eye height above the floor, metres.
    pub eye_height: f64,
    /// Orbit centre `[x, y]`; defaults to the footprint centroid.
    pub center: Option<[f64; 2]>,
    /// Orbit radius, metres.
    pub radius: f64,
    /// Full heading turns over the sequence (orbit).
    pub yaw_turns: f64,
    /// Pitch amplitude, degrees.
    pub pitch_amplitude_deg: f64,
    /// Pitch oscillations over the sequence (orbit).
    pub pitch_cycles: f64,
    /// Step length, metres (random walk).
    pub step_m: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            mode: TrajectoryMode::Orbit,
            frames: 200,
            seed: 0,
            eye_height: 1.5,
            center: None,
            radius: 0.5,
            yaw_turns: 2.0,
            pitch_amplitude_deg: 40.0,
            pitch_cycles: 7.0,
            step_m: 0.2,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.frames == 0 {
            return Err(SynthError::InvalidSpec("frames must be at least 1".into()));
        }
        if !(self.pitch_amplitude_deg.abs() < 85.0) {
            return Err(SynthError::InvalidSpec("pitch amplitude must be below 85°".into()));
        }
        if !(self.radius >= 0.0 && self.step_m >= 0.0) {
            return Err(SynthError::InvalidSpec("radius and step must be non-negative".into()));
        }
        Ok(())
    }
}

fn camera_pose(eye: Vector3<f64>, yaw: f64, pitch: f64) -> Pose {
    let dir = Vector3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin());
    Pose::look_at(&eye, &(eye + dir), &Vector3::z()).expect("pitch bounded away from vertical")
}

/// Camera poses for frames `1..=frames`.
pub fn trajectory(spec: &RoomSpec, traj: &TrajectorySpec) -> Result<BTreeMap<FrameId, Pose>, SynthError> {
    traj.validate()?;
    let spec = spec.validate()?;
    let pts = spec.points();
    let z = spec.floor_z + traj.eye_height;
    let amp = traj.pitch_amplitude_deg.to_radians();
    let mut eyes = Vec::with_capacity(traj.frames);
    match traj.mode {
        TrajectoryMode::Orbit => {
            let c = traj.center.map(|c| Point2::new(c[0], c[1])).unwrap_or_else(|| polygon::centroid(&pts));
            let n = traj.frames as f64;
            for f in 0..traj.frames {
                let t = f as f64 / n;
                let theta = 2.0 * PI * t;
                let eye = Vector3::new(c.x + traj.radius * theta.cos(), c.y + traj.radius * theta.sin(), z);
                let yaw = 2.0 * PI * traj.yaw_turns * t;
                let pitch = amp * (2.0 * PI * traj.pitch_cycles * t).sin();
                eyes.push((eye, yaw, pitch));
            }
        }
        TrajectoryMode::RandomWalk => {
            let mut rng = ChaCha8Rng::seed_from_u64(traj.seed);
            let c = traj.center.map(|c| Point2::new(c[0], c[1])).unwrap_or_else(|| polygon::centroid(&pts));
            let mut pos = c;
            for _ in 0..traj.frames {
                let yaw = rng.random_range(0.0..2.0 * PI);
                let pitch = if amp > 0.0 { rng.random_range(-amp..=amp) } else { 0.0 };
                eyes.push((Vector3::new(pos.x, pos.y, z), yaw, pitch));
                // rejected steps leave the camera in place
                for _ in 0..16 {
                    let h = rng.random_range(0.0..2.0 * PI);
                    let next = pos + Vector2::new(h.cos(), h.sin()) * traj.step_m;
                    if point_in_polygon(&pts, next) && clearance(&pts, next) > 0.3 {
                        pos = next;
                        break;
                    }
                }
            }
        }
    }
    let mut poses = BTreeMap::new();
    for (f, (eye, yaw, pitch)) in eyes.into_iter().enumerate() {
        let frame = f as FrameId + 1;
        let inside =
            point_in_polygon(&pts, Point2::new(eye.x, eye.y)) && eye.z > spec.floor_z && eye.z < spec.ceiling_z();
        if !inside {
            return Err(SynthError::CameraOutsideRoom { frame, x: eye.x, y: eye.y, z: eye.z });
        }
        poses.insert(frame, camera_pose(eye, yaw, pitch));
    }
    Ok(poses)
}

/// Distance from `p` to the nearest footprint edge.
fn clearance(pts: &[Point2<f64>], p: Point2<f64>) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            let ab = b - a;
            let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            (p - (a + ab * t)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// A room surface as convex 3D pieces.
#[derive(Debug, Clone)]
struct Surface {
    klass: Klass,
    plane: Plane,
    pieces: Vec<Vec<Vector3<f64>>>,
}

fn surfaces(spec: &RoomSpec, planes: &RoomPlanes) -> Vec<Surface> {
    let mut out: Vec<Surface> = planes
        .walls
        .iter()
        .map(|w| Surface { klass: Klass::Wall, plane: w.plane, pieces: vec![w.extent.vertices_3d()] })
        .collect();
    let pts = spec.points();
    let tris = triangulate(&pts);
    for (plane, z) in [(planes.floor, spec.floor_z), (planes.ceiling, spec.ceiling_z())] {
        let pieces = tris.iter().map(|t| t.iter().map(|&i| Vector3::new(pts[i].x, pts[i].y, z)).collect()).collect();
        out.push(Surface { klass: Klass::FloorCeiling, plane, pieces });
    }
    out
}

/// Image-space bounding box and visible area of a surface, if it is at
/// least partly inside the view frustum.
fn project_surface(surface: &Surface, world_to_cam: &Pose, k: &Intrinsics) -> Option<(BBox, f64)> {
    let (w, h) = (f64::from(k.width), f64::from(k.height));
    let mut bbox: Option<BBox> = None;
    let mut area = 0.0;
    for piece in &surface.pieces {
        let cam: Vec<Vector3<f64>> = piece.iter().map(|p| world_to_cam.transform_point(p)).collect();
        let near = clip_near(&cam);
        if near.len() < 3 {
            continue;
        }
        let mut img: Vec<Point2<f64>> =
            near.iter().map(|p| Point2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)).collect();
        for (a, b, c) in [(1.0, 0.0, 0.0), (-1.0, 0.0, w), (0.0, 1.0, 0.0), (0.0, -1.0, h)] {
            img = polygon::clip_halfplane(&img, a, b, c);
        }
        let a = polygon::area(&img);
        if img.len() < 3 || a <= 0.0 {
            continue;
        }
        area += a;
        let mut bb = BBox::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &img {
            bb = BBox::new(bb.x0.min(p.x), bb.y0.min(p.y), bb.x1.max(p.x), bb.y1.max(p.y));
        }
        bbox = Some(match bbox {
            None => bb,
            Some(o) => BBox::new(o.x0.min(bb.x0), o.y0.min(bb.y0), o.x1.max(bb.x1), o.y1.max(bb.y1)),
        });
    }
    bbox.map(|b| (b.clamp_to(k), area))
}

/// Keeps the part of a camera-frame polygon with `z >= NEAR_PLANE`.
fn clip_near(poly: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (da, db) = (a.z - NEAR_PLANE, b.z - NEAR_PLANE);
        if da >= 0.0 {
            out.push(a);
        }
        if (da >= 0.0) != (db >= 0.0) {
            out.push(a + (b - a) * (da / (da - db)));
        }
    }
    out
}

/// Rotates `n` by `angle` about a unit axis perpendicular to it chosen by `phi`.
fn tilt(n: &Vector3<f64>, phi: f64, angle: f64) -> Vector3<f64> {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let a = n.cross(&helper).normalize();
    let b = n.cross(&a);
    let axis = Unit::new_normalize(a * phi.cos() + b * phi.sin());
    Rotation3::from_axis_angle(&axis, angle) * n
}

/// Exact ground truth accompanying a generated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub room: RoomSpec,
    pub planes: RoomPlanes,
    /// Noise-free detection of every visible surface, in frame order.
    pub clean: Vec<Measurement>,
    /// Surface of each clean detection: walls by index, then floor, ceiling.
    pub clean_surfaces: Vec<usize>,
    /// Surface of each emitted measurement; `None` for spurious ones.
    pub sources: Vec<Option<usize>>,
    /// Visible surfaces per frame.
    pub visibility: BTreeMap<FrameId, Vec<usize>>,
}

struct FrameOutput {
    clean: Vec<(usize, Measurement)>,
    noisy: Vec<(Option<usize>, Measurement)>,
}

fn generate_frame(
    frame: FrameId,
    pose: &Pose,
    surfaces: &[Surface],
    bounds: &SceneBounds,
    k: &Intrinsics,
    noise: &NoiseSpec,
    seed: u64,
) -> FrameOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame);
    let to_cam = pose.inverse();
    let mut out = FrameOutput { clean: Vec::new(), noisy: Vec::new() };
    for (s, surface) in surfaces.iter().enumerate() {
        let Some((bbox, area)) = project_surface(surface, &to_cam, k) else { continue };
        if area < MIN_PROJECTED_AREA || !bbox.is_valid() {
            continue;
        }
        let plane_cam = surface.plane.transform(&to_cam);
        let clean = Measurement { frame_id: frame, klass: surface.klass, score: 1.0, bbox, plane_cam };
        // fixed number of draws per visible surface keeps streams aligned
        let phi = rng.random_range(0.0..2.0 * PI);
        let angle = noise.sample(&mut rng, noise.sigma_normal_deg).abs().to_radians();
        let dd = noise.sample(&mut rng, noise.sigma_d_m);
        let jitter: [f64; 4] = std::array::from_fn(|_| noise.sample(&mut rng, noise.sigma_bbox_px));
        let keep = rng.random::<f64>() >= noise.p_dropout;
        out.clean.push((s, clean.clone()));
        if !keep {
            continue;
        }
        let n = tilt(plane_cam.normal(), phi, angle);
        let Ok(plane) = Plane::new(n, plane_cam.offset() + dd) else { continue };
        let b =
            BBox::new(bbox.x0 + jitter[0], bbox.y0 + jitter[1], bbox.x1 + jitter[2], bbox.y1 + jitter[3]).clamp_to(k);
        if !b.is_valid() {
            continue;
        }
        out.noisy.push((Some(s), Measurement { bbox: b, plane_cam: plane, ..clean }));
    }
    if noise.p_spurious > 0.0 && rng.random::<f64>() < noise.p_spurious {
        if let Some(m) = spurious(frame, &to_cam, bounds, k, &mut rng) {
            out.noisy.push((None, m));
        }
    }
    out
}

/// A random plane through a random point of the room, seen in a random box.
fn spurious(
    frame: FrameId,
    to_cam: &Pose,
    bounds: &SceneBounds,
    k: &Intrinsics,
    rng: &mut ChaCha8Rng,
) -> Option<Measurement> {
    let p = Vector3::from_fn(|i, _| rng.random_range(bounds.min[i]..=bounds.max[i]));
    let wall = rng.random::<bool>();
    let normal = if wall {
        let h = rng.random_range(0.0..2.0 * PI);
        Vector3::new(h.cos(), h.sin(), 0.0)
    } else {
        Vector3::z()
    };
    let plane = Plane::from_point_normal(&p, &normal).ok()?.transform(to_cam);
    let (w, h) = (f64::from(k.width), f64::from(k.height));
    let bw = rng.random_range(40.0_f64.min(w)..=(w / 2.0).max(40.0_f64.min(w)));
    let bh = rng.random_range(40.0_f64.min(h)..=(h / 2.0).max(40.0_f64.min(h)));
    let x0 = rng.random_range(0.0..=(w - bw));
    let y0 = rng.random_range(0.0..=(h - bh));
    let bbox = BBox::new(x0, y0, x0 + bw, y0 + bh);
    bbox_to_patch(&bbox, k, &plane).ok()?;
    let klass = if wall { Klass::Wall } else { Klass::FloorCeiling };
    Some(Measurement { frame_id: frame, klass, score: 1.0, bbox, plane_cam: plane })
}

/// Generates a full sequence: poses along `traj` and per-frame detections
/// perturbed by `noise`. Each frame draws from its own random stream, so the
/// output does not depend on scheduling.
pub fn generate_sequence(
    spec: &RoomSpec,
    traj: &TrajectorySpec,
    k: &Intrinsics,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<(SequenceBundle, GroundTruth), SynthError> {
    let room = spec.validate()?;
    noise.validate()?;
    k.validate().map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let planes = room_planes(&room)?;
    let poses = trajectory(&room, traj)?;
    let surfs = surfaces(&room, &planes);
    let bounds = room.bounds();
    let frames: Vec<FrameOutput> =
        poses.par_iter().map(|(&f, pose)| generate_frame(f, pose, &surfs, &bounds, k, noise, seed)).collect();
    let mut gt = GroundTruth {
        room,
        planes,
        clean: Vec::new(),
        clean_surfaces: Vec::new(),
        sources: Vec::new(),
        visibility: BTreeMap::new(),
    };
    let mut measurements = Vec::new();
    for ((&f, _), out) in poses.iter().zip(frames) {
        gt.visibility.insert(f, out.clean.iter().map(|(s, _)| *s).collect());
        for (s, m) in out.clean {
            gt.clean_surfaces.push(s);
            gt.clean.push(m);
        }
        for (s, m) in out.noisy {
            gt.sources.push(s);
            measurements.push(m);
        }
    }
    Ok((SequenceBundle { intrinsics: *k, poses, measurements }, gt))
}

/// 640×480 pinhole camera with a 525 px focal length.
pub fn default_intrinsics() -> Intrinsics {
    Intrinsics::new(525.0, 525.0, 320.0, 240.0, 640, 480).expect("valid intrinsics")
}

/// The true room as a layout: one wall segment per footprint edge.
pub fn ground_truth_layout(spec: &RoomSpec) -> Result<RoomLayout, SynthError> {
    let room = spec.validate()?;
    let planes = room_planes(&room)?;
    Ok(RoomLayout {
        walls: planes
            .walls
            .iter()
            .enumerate()
            .map(|(i, w)| WallSegment { cluster_id: i, polygon: w.extent.clone() })
            .collect(),
        floor: planes.floor,
        ceiling: planes.ceiling,
        bounds: room.bounds(),
    })
}

/// Gates and slack for [`compare_layouts`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareTolerance {
    /// Largest normal angle for two planes to be matched, degrees.
    pub angle_gate_deg: f64,
    /// Largest offset difference for two planes to be matched, metres.
    pub offset_gate_m: f64,
    /// How far outside a true extent a segment centroid may lie, metres.
    pub extent_slack_m: f64,
}

impl Default for CompareTolerance {
    fn default() -> Self {
        Self { angle_gate_deg: 10.0, offset_gate_m: 0.5, extent_slack_m: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallMatch {
    /// Index of the true wall.
    pub truth: usize,
    /// Cluster id of the estimated plane.
    pub estimate: usize,
    pub normal_error_deg: f64,
    pub offset_error_m: f64,
    /// Fraction of the true extent covered by estimated segments.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutComparison {
    pub matches: Vec<WallMatch>,
    pub unmatched_truth: Vec<usize>,
    /// Cluster ids of estimated planes without a true counterpart.
    pub unmatched_estimate: Vec<usize>,
    /// Estimated segments on an unmatched plane or centred outside the
    /// matched true extent (indices into the estimate's walls).
    pub spurious_segments: Vec<usize>,
}

impl LayoutComparison {
    pub fn max_normal_error_deg(&self) -> f64 {
        self.matches.iter().map(|m| m.normal_error_deg).fold(0.0, f64::max)
    }

    pub fn max_offset_error_m(&self) -> f64 {
        self.matches.iter().map(|m| m.offset_error_m).fold(0.0, f64::max)
    }
}

/// Unsigned angle between plane normals, degrees; exact for equal normals.
fn fold_angle_deg(a: &Plane, b: &Plane) -> f64 {
    let (na, nb) = (a.normal(), b.normal());
    na.cross(nb).norm().atan2(na.dot(nb).abs()).to_degrees()
}

/// Offset difference after aligning the normals' signs.
fn offset_difference(a: &Plane, b: &Plane) -> f64 {
    if a.normal().dot(b.normal()) >= 0.0 {
        (a.offset() - b.offset()).abs()
    } else {
        (a.offset() + b.offset()).abs()
    }
}

/// Matches estimated wall planes to true ones (angle gate, then minimum
/// total offset difference) and classifies every estimated segment.
pub fn compare_layouts(estimate: &RoomLayout, truth: &RoomLayout, tol: &CompareTolerance) -> LayoutComparison {
    let est = estimate.wall_planes();
    let tru = truth.wall_planes();
    const BLOCKED: f64 = 1e9;
    let size = est.len().max(tru.len());
    let cost: Vec<Vec<f64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| match (est.get(i), tru.get(j)) {
                    (Some((_, e)), Some((_, t))) => {
                        let ang = fold_angle_deg(e, t);
                        let off = offset_difference(e, t);
                        if ang <= tol.angle_gate_deg && off <= tol.offset_gate_m {
                            off + 1e-3 * ang
                        } else {
                            BLOCKED
                        }
                    }
                    _ => BLOCKED,
                })
                .collect()
        })
        .collect();
    let assignment = hungarian(&cost);
    let mut pairs: Vec<(usize, usize)> =
        assignment.iter().enumerate().filter(|&(i, &j)| cost[i][j] < BLOCKED).map(|(i, &j)| (i, j)).collect();
    pairs.sort_by_key(|&(_, j)| j);

    let mut matches = Vec::new();
    let mut spurious = Vec::new();
    let mut seg_ok = vec![false; estimate.walls.len()];
    for &(i, j) in &pairs {
        let (est_id, e) = est[i];
        let (tru_id, t) = tru[j];
        let extents: Vec<&PlanarPolygon> =
            truth.walls.iter().filter(|w| w.cluster_id == tru_id).map(|w| &w.polygon).collect();
        let mut covered = 0.0;
        let total: f64 = extents.iter().map(|p| p.area()).sum();
        for (s, seg) in estimate.walls.iter().enumerate().filter(|(_, w)| w.cluster_id == est_id) {
            for ext in &extents {
                let local: Vec<Point2<f64>> =
                    seg.polygon.vertices_3d().iter().map(|p| ext.frame().to_local(p)).collect();
                let local = if polygon::signed_area(&local) < 0.0 { local.into_iter().rev().collect() } else { local };
                covered += polygon::convex_intersection_area(&local, ext.vertices());
                let c = ext.frame().to_local(&seg.polygon.centroid_3d());
                if inside_with_slack(ext.vertices(), c, tol.extent_slack_m) {
                    seg_ok[s] = true;
                }
            }
        }
        matches.push(WallMatch {
            truth: tru_id,
            estimate: est_id,
            normal_error_deg: fold_angle_deg(&e, &t),
            offset_error_m: offset_difference(&e, &t),
            coverage: if total > 0.0 { covered / total } else { 0.0 },
        });
    }
    for (s, ok) in seg_ok.iter().enumerate() {
        if !ok {
            spurious.push(s);
        }
    }
    let unmatched_truth = (0..tru.len()).filter(|j| !pairs.iter().any(|p| p.1 == *j)).map(|j| tru[j].0).collect();
    let unmatched_estimate = (0..est.len()).filter(|i| !pairs.iter().any(|p| p.0 == *i)).map(|i| est[i].0).collect();
    LayoutComparison { matches, unmatched_truth, unmatched_estimate, spurious_segments: spurious }
}

/// `p` lies inside the CCW convex polygon or within `slack` of it.
fn inside_with_slack(poly: &[Point2<f64>], p: Point2<f64>, slack: f64) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        orient(a, b, p) / (b - a).norm() >= -slack
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::lift_to_world;

    fn unit_square() -> RoomSpec {
        RoomSpec { footprint: vec![[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]], floor_z: -1.0, height: 2.0 }
    }

    fn six_wall() -> RoomSpec {
        RoomSpec {
            footprint: vec![[-3.0, -2.0], [3.0, -2.0], [3.0, 3.0], [0.0, 3.0], [-1.0, 2.0], [-3.0, 2.0]],
            floor_z: -1.5,
            height: 3.0,
        }
    }

    #[test]
    fn validation_merges_and_orients() {
        let cw = RoomSpec {
            footprint: vec![[-2.0, -1.0], [-2.0, 1.0], [0.0, 1.0], [2.0, 1.0], [2.0, -1.0], [2.0, -1.0]],
            floor_z: 0.0,
            height: 2.5,
        };
        let v = cw.validate().unwrap();
        assert_eq!(v.footprint.len(), 4);
        assert!(polygon::signed_area(&v.points()) > 0.0);
        let bowtie = RoomSpec { footprint: vec![[0.0, 0.0], [2.0, 2.0], [2.0, 0.0], [0.0, 2.0]], ..cw.clone() };
        assert!(matches!(bowtie.validate(), Err(SynthError::InvalidFootprint(_))));
        let tiny = RoomSpec::rectangle(0.5, 0.5, 0.0, 2.5);
        assert!(tiny.validate().is_err());
        assert!(RoomSpec { height: 6.0, ..cw }.validate().is_err());
    }

    #[test]
    fn unit_square_planes_point_inward() {
        let spec =
            RoomSpec { footprint: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], floor_z: 0.0, height: 2.0 };
        let p = room_planes(&spec).unwrap();
        let normals: Vec<[f64; 3]> = p.walls.iter().map(|w| w.inward_normal.into()).collect();
        assert_eq!(normals, vec![[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [1.0, 0.0, 0.0]]);
        let centre = Vector3::new(0.5, 0.5, 1.0);
        for w in &p.walls {
            let raw =
                w.inward_normal.dot(&centre) - w.inward_normal.dot(&Vector3::new(w.edge[0][0], w.edge[0][1], 0.0));
            assert!(raw > 0.0);
            assert!((w.extent.area() - 2.0).abs() < 1e-12);
        }
        assert_eq!(p.floor.to_array(), [0.0, 0.0, 1.0, 0.0]);
        assert_eq!(p.ceiling.to_array(), [0.0, 0.0, -1.0, 2.0]);
    }

    #[test]
    fn angled_wall_is_non_manhattan() {
        let p = room_planes(&six_wall()).unwrap();
        assert_eq!(p.walls.len(), 6);
        let diag = &p.walls[3];
        let n = diag.inward_normal;
        assert!((n.x.abs() - 0.5_f64.sqrt()).abs() < 1e-12 && (n.y.abs() - 0.5_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn triangulation_covers_area() {
        let pts = six_wall().validate().unwrap().points();
        let tris = triangulate(&pts);
        assert_eq!(tris.len(), 4);
        let sum: f64 = tris.iter().map(|t| polygon::area(&[pts[t[0]], pts[t[1]], pts[t[2]]])).sum();
        assert!((sum - polygon::area(&pts)).abs() < 1e-12);
    }

    #[test]
    fn noise_free_lift_recovers_true_planes() {
        let traj = TrajectorySpec { frames: 40, radius: 0.1, ..Default::default() };
        let (bundle, gt) =
            generate_sequence(&unit_square(), &traj, &default_intrinsics(), &NoiseSpec::default(), 3).unwrap();
        assert!(!bundle.measurements.is_empty());
        bundle.validate().unwrap();
        let (lifted, drops) = lift_to_world(&bundle);
        assert_eq!(drops.total(), 0);
        let truth: Vec<Plane> =
            gt.planes.walls.iter().map(|w| w.plane).chain([gt.planes.floor, gt.planes.ceiling]).collect();
        for (g, src) in lifted.iter().zip(&gt.sources) {
            let t = truth[src.unwrap()];
            for (a, b) in g.plane_world.to_array().iter().zip(t.to_array()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_and_schedule_independent() {
        let traj = TrajectorySpec { frames: 30, mode: TrajectoryMode::RandomWalk, seed: 5, ..Default::default() };
        let noise = NoiseSpec {
            sigma_normal_deg: 3.0,
            sigma_d_m: 0.03,
            sigma_bbox_px: 2.0,
            p_spurious: 0.3,
            ..Default::default()
        };
        let k = default_intrinsics();
        let a = generate_sequence(&six_wall(), &traj, &k, &noise, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| generate_sequence(&six_wall(), &traj, &k, &noise, 9).unwrap());
        assert_eq!(a, b);
        let c = generate_sequence(&six_wall(), &traj, &k, &noise, 10).unwrap();
        assert_ne!(a.0.measurements, c.0.measurements);
    }

    #[test]
    fn full_dropout_is_empty() {
        let noise = NoiseSpec { p_dropout: 1.0, ..Default::default() };
        let traj = TrajectorySpec { frames: 10, ..Default::default() };
        let (b, gt) = generate_sequence(&six_wall(), &traj, &default_intrinsics(), &noise, 1).unwrap();
        assert!(b.measurements.is_empty());
        assert!(!gt.clean.is_empty());
    }

    #[test]
    fn camera_outside_room_rejected() {
        let traj = TrajectorySpec { center: Some([10.0, 0.0]), frames: 3, ..Default::default() };
        let r = generate_sequence(&six_wall(), &traj, &default_intrinsics(), &NoiseSpec::default(), 1);
        assert!(matches!(r, Err(SynthError::CameraOutsideRoom { frame: 1, .. })));
        let low = TrajectorySpec { eye_height: 4.0, frames: 3, ..Default::default() };
        assert!(generate_sequence(&six_wall(), &low, &default_intrinsics(), &NoiseSpec::default(), 1).is_err());
    }

    #[test]
    fn visible_surfaces_are_detected_in_bounds() {
        let traj = TrajectorySpec { frames: 50, ..Default::default() };
        let k = default_intrinsics();
        let (b, gt) = generate_sequence(&six_wall(), &traj, &k, &NoiseSpec::default(), 2).unwrap();
        assert_eq!(b.measurements, gt.clean);
        for m in &b.measurements {
            assert!(m.bbox.within(&k) && m.bbox.is_valid());
        }
        let seen: std::collections::BTreeSet<usize> = gt.clean_surfaces.iter().copied().collect();
        assert_eq!(seen.len(), 8, "every wall, the floor and the ceiling seen at least once");
    }

    #[test]
    fn ground_truth_layout_self_comparison() {
        let l = ground_truth_layout(&unit_square()).unwrap();
        assert_eq!(l.walls.len(), 4);
        assert!(l.walls.iter().all(|w| (w.polygon.area() - 2.0).abs() < 1e-12));
        let six = ground_truth_layout(&six_wall()).unwrap();
        assert_eq!(six.walls.len(), 6);
        let c = compare_layouts(&six, &six, &CompareTolerance::default());
        assert_eq!(c.matches.len(), 6);
        assert!(c.unmatched_truth.is_empty() && c.unmatched_estimate.is_empty() && c.spurious_segments.is_empty());
        assert_eq!(c.max_normal_error_deg(), 0.0);
        assert_eq!(c.max_offset_error_m(), 0.0);
        assert!(c.matches.iter().all(|m| (m.coverage - 1.0).abs() < 1e-9));
    }

    #[test]
    fn comparison_flags_phantom_and_parallel_walls() {
        let truth = ground_truth_layout(&six_wall()).unwrap();
        let mut est = truth.clone();
        // a segment of the y = 3 plane beyond the notch corner
        let plane = truth.walls[2].polygon.plane();
        let pts = [
            Vector3::new(-2.0, 3.0, -1.5),
            Vector3::new(-1.0, 3.0, -1.5),
            Vector3::new(-1.0, 3.0, 1.5),
            Vector3::new(-2.0, 3.0, 1.5),
        ];
        est.walls.push(WallSegment { cluster_id: 2, polygon: PlanarPolygon::from_points(*plane, &pts) });
        let c = compare_layouts(&est, &truth, &CompareTolerance::default());
        assert_eq!(c.spurious_segments, vec![6]);
        // parallel y = 2 and y = 3 walls are kept apart
        assert!(c.matches.iter().all(|m| m.truth == m.estimate));
    }
}
