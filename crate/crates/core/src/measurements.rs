//! Per-frame plane detections, their file formats and world lifting.
//!
//! Measurements are stored one JSON object per line:
//!
//! ```text
//! {"frame": 12, "class": "wall", "score": 0.97, "bbox": [x0, y0, x1, y1], "plane": [nx, ny, nz, d]}
//! ```
//!
//! Poses are stored one frame per line as `frame tx ty tz qx qy qz qw`
//! (camera→world, unit quaternion); lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{bbox_to_patch, BBox, GeometryError, Intrinsics, PlanarPolygon, Plane, Pose};

pub type FrameId = u64;

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("no pose for frame {0}")]
    MissingPose(FrameId),
    #[error("record on line {line}: {reason}")]
    InvariantViolation { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl MeasurementError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Klass {
    Wall,
    FloorCeiling,
}

/// One detected plane instance in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurement {
    #[serde(rename = "frame")]
    pub frame_id: FrameId,
    #[serde(rename = "class")]
    pub klass: Klass,
    #[serde(default = "default_score")]
    pub score: f64,
    pub bbox: BBox,
    #[serde(rename = "plane")]
    pub plane_cam: Plane,
}

fn default_score() -> f64 {
    1.0
}

impl Measurement {
    pub fn validate(&self, k: &Intrinsics) -> Result<(), String> {
        if self.frame_id == 0 {
            return Err("frame ids must be strictly positive".into());
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        if !self.bbox.is_valid() {
            return Err("bbox must satisfy x0 < x1 and y0 < y1".into());
        }
        if !self.bbox.within(k) {
            return Err("bbox outside image bounds".into());
        }
        Ok(())
    }
}

/// A measurement lifted into the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMeasurement {
    pub source: Measurement,
    pub plane_world: Plane,
    pub patch_world: PlanarPolygon,
}

/// Intrinsics, poses and detections of one image sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBundle {
    pub intrinsics: Intrinsics,
    pub poses: BTreeMap<FrameId, Pose>,
    pub measurements: Vec<Measurement>,
}

impl SequenceBundle {
    pub fn validate(&self) -> Result<(), MeasurementError> {
        self.intrinsics
            .validate()
            .map_err(|e| MeasurementError::InvariantViolation { line: 0, reason: e.to_string() })?;
        if self.poses.contains_key(&0) {
            return Err(MeasurementError::InvariantViolation { line: 0, reason: "pose for frame 0".into() });
        }
        for (i, m) in self.measurements.iter().enumerate() {
            m.validate(&self.intrinsics)
                .map_err(|reason| MeasurementError::InvariantViolation { line: i + 1, reason })?;
            if !self.poses.contains_key(&m.frame_id) {
                return Err(MeasurementError::MissingPose(m.frame_id));
            }
        }
        Ok(())
    }
}

/// Parses a measurement file body. Blank lines are skipped.
pub fn parse_measurements(text: &str) -> Result<Vec<Measurement>, MeasurementError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let m: Measurement =
            serde_json::from_str(line).map_err(|e| MeasurementError::Parse { line: i + 1, reason: e.to_string() })?;
        out.push(m);
    }
    Ok(out)
}

pub fn format_measurements(measurements: &[Measurement]) -> String {
    let mut s = String::new();
    for m in measurements {
        s.push_str(&serde_json::to_string(m).expect("measurement serializes"));
        s.push('\n');
    }
    s
}

pub fn parse_poses(text: &str) -> Result<BTreeMap<FrameId, Pose>, MeasurementError> {
    let mut poses = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| MeasurementError::Parse { line: i + 1, reason };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", fields.len())));
        }
        let frame: FrameId = fields[0].parse().map_err(|e| err(format!("frame id: {e}")))?;
        if frame == 0 {
            return Err(err("frame ids must be strictly positive".into()));
        }
        let mut v = [0.0; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|e| err(format!("'{f}': {e}")))?;
        }
        let pose = Pose::from_translation_quaternion([v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]])
            .map_err(|e| err(e.to_string()))?;
        if poses.insert(frame, pose).is_some() {
            return Err(err(format!("duplicate frame {frame}")));
        }
    }
    Ok(poses)
}

pub fn format_poses(poses: &BTreeMap<FrameId, Pose>) -> String {
    let mut s = String::from("# frame tx ty tz qx qy qz qw (camera to world)\n");
    for (id, p) in poses {
        let t = p.translation();
        let q = p.quaternion_xyzw();
        writeln!(s, "{id} {} {} {} {} {} {} {}", t.x, t.y, t.z, q[0], q[1], q[2], q[3]).unwrap();
    }
    s
}

pub fn load_sequence(
    measurement_path: &Path,
    pose_path: &Path,
    intrinsics: Intrinsics,
) -> Result<SequenceBundle, MeasurementError> {
    let mtext = std::fs::read_to_string(measurement_path).map_err(|e| MeasurementError::io(measurement_path, e))?;
    let ptext = std::fs::read_to_string(pose_path).map_err(|e| MeasurementError::io(pose_path, e))?;
    let measurements = parse_measurements(&mtext)?;
    let poses = parse_poses(&ptext)?;
    let bundle = SequenceBundle { intrinsics, poses, measurements };
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_sequence(
    bundle: &SequenceBundle,
    measurement_path: &Path,
    pose_path: &Path,
) -> Result<(), MeasurementError> {
    std::fs::write(measurement_path, format_measurements(&bundle.measurements))
        .map_err(|e| MeasurementError::io(measurement_path, e))?;
    std::fs::write(pose_path, format_poses(&bundle.poses)).map_err(|e| MeasurementError::io(pose_path, e))
}

/// Counts of measurements dropped while lifting, per reason.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub ray_parallel: usize,
    pub behind_camera: usize,
    pub degenerate_patch: usize,
    pub missing_pose: usize,
}

impl DropReport {
    pub fn total(&self) -> usize {
        self.ray_parallel + self.behind_camera + self.degenerate_patch + self.missing_pose
    }
}

/// Camera-frame patch of a measurement lifted into the world with `pose`.
pub fn lift_measurement(m: &Measurement, k: &Intrinsics, pose: &Pose) -> Result<GlobalMeasurement, GeometryError> {
    let patch = bbox_to_patch(&m.bbox, k, &m.plane_cam)?;
    Ok(GlobalMeasurement {
        source: m.clone(),
        plane_world: m.plane_cam.transform(pose),
        patch_world: patch.transform(pose),
    })
}

/// Lifts every measurement into the world frame, ordered by frame id and
/// then input order. Measurements whose bbox cannot be back-projected are
/// dropped and counted.
pub fn lift_to_world(bundle: &SequenceBundle) -> (Vec<GlobalMeasurement>, DropReport) {
    let mut order: Vec<usize> = (0..bundle.measurements.len()).collect();
    order.sort_by_key(|&i| bundle.measurements[i].frame_id);
    let results: Vec<Result<GlobalMeasurement, Option<GeometryError>>> = order
        .par_iter()
        .map(|&i| {
            let m = &bundle.measurements[i];
            let pose = bundle.poses.get(&m.frame_id).ok_or(None)?;
            lift_measurement(m, &bundle.intrinsics, pose).map_err(Some)
        })
        .collect();
    let mut report = DropReport::default();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(g) => out.push(g),
            Err(None) => report.missing_pose += 1,
            Err(Some(GeometryError::RayParallel)) => report.ray_parallel += 1,
            Err(Some(GeometryError::BehindCamera)) => report.behind_camera += 1,
            Err(Some(_)) => report.degenerate_patch += 1,
        }
    }
    (out, report)
}

/// Angle in degrees between a camera-frame plane's normal and the optical
/// axis, in `[0, 90]`.
pub fn view_angle_deg(plane_cam: &Plane) -> f64 {
    plane_cam.normal().z.abs().min(1.0).acos().to_degrees()
}

/// Drops measurements whose plane is within `min_angle_deg` of perpendicular
/// to the image plane. Order is preserved.
pub fn filter_grazing(measurements: &[GlobalMeasurement], min_angle_deg: f64) -> Vec<GlobalMeasurement> {
    let max_view = 90.0 - min_angle_deg;
    measurements.iter().filter(|m| view_angle_deg(&m.source.plane_cam) <= max_view).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};

    fn k() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    fn wall(frame: FrameId, normal: Vector3<f64>, d: f64) -> Measurement {
        Measurement {
            frame_id: frame,
            klass: Klass::Wall,
            score: 1.0,
            bbox: BBox::new(10.0, 10.0, 90.0, 90.0),
            plane_cam: Plane::new(normal, d).unwrap(),
        }
    }

    #[test]
    fn parses_record_format() {
        let line = r#"{"frame": 12, "class": "wall", "score": 0.97, "bbox": [1, 2, 30, 40], "plane": [0, 0, 2, -4]}"#;
        let ms = parse_measurements(&format!("{line}\n\n")).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].frame_id, 12);
        assert_eq!(ms[0].klass, Klass::Wall);
        assert_eq!(ms[0].plane_cam.to_array(), [0.0, 0.0, -1.0, 2.0]);
        let fc = r#"{"frame": 1, "class": "floor_ceiling", "bbox": [1, 2, 30, 40], "plane": [0, 1, 0, 1]}"#;
        assert_eq!(parse_measurements(fc).unwrap()[0].score, 1.0);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "{\"frame\": 1, \"class\": \"wall\", \"bbox\": [0,0,1,1], \"plane\": [1,0,0,1]}\nnot json\n";
        match parse_measurements(text) {
            Err(MeasurementError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let typo = r#"{"frame": 1, "klass": "wall", "bbox": [0,0,1,1], "plane": [1,0,0,1]}"#;
        assert!(parse_measurements(typo).is_err());
        assert!(matches!(parse_poses("# c\n1 0 0 0 0 0 0\n"), Err(MeasurementError::Parse { line: 2, .. })));
        assert!(parse_poses("1 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n").is_err());
        assert!(parse_poses("0 0 0 0 0 0 0 1\n").is_err());
    }

    #[test]
    fn validation_reports_missing_pose() {
        let bundle = SequenceBundle {
            intrinsics: k(),
            poses: parse_poses("1 0 0 0 0 0 0 1\n").unwrap(),
            measurements: vec![wall(2, Vector3::z(), 2.0)],
        };
        assert!(matches!(bundle.validate(), Err(MeasurementError::MissingPose(2))));
        let mut bad = wall(1, Vector3::z(), 2.0);
        bad.bbox = BBox::new(0.0, 0.0, 200.0, 10.0);
        let bundle = SequenceBundle { measurements: vec![bad], ..bundle };
        assert!(matches!(bundle.validate(), Err(MeasurementError::InvariantViolation { .. })));
    }

    #[test]
    fn empty_measurement_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let mp = dir.path().join("m.jsonl");
        let pp = dir.path().join("p.traj");
        std::fs::write(&mp, "").unwrap();
        std::fs::write(&pp, "# header\n3 1 2 3 0 0 0 1\n").unwrap();
        let b = load_sequence(&mp, &pp, k()).unwrap();
        assert!(b.measurements.is_empty());
        assert_eq!(b.poses.len(), 1);
        assert!(matches!(load_sequence(&dir.path().join("nope"), &pp, k()), Err(MeasurementError::Io { .. })));
    }

    #[test]
    fn identity_pose_lift_keeps_plane() {
        let m = wall(1, Vector3::new(0.0, 0.0, -1.0), 2.0);
        let bundle = SequenceBundle {
            intrinsics: k(),
            poses: [(1, Pose::identity())].into_iter().collect(),
            measurements: vec![m.clone()],
        };
        let (lifted, drops) = lift_to_world(&bundle);
        assert_eq!(drops.total(), 0);
        assert_eq!(lifted[0].plane_world, m.plane_cam);
        for v in lifted[0].patch_world.vertices_3d() {
            assert!(lifted[0].plane_world.signed_distance(&v).abs() < 1e-9);
        }
    }

    #[test]
    fn horizon_crossing_bbox_is_dropped() {
        // floor 1 m below; bbox straddles the horizon row
        let mut m = wall(1, Vector3::new(0.0, -1.0, 0.0), 1.0);
        m.bbox = BBox::new(10.0, 30.0, 90.0, 90.0);
        let ok = wall(1, Vector3::new(0.0, 0.0, -1.0), 2.0);
        let bundle = SequenceBundle {
            intrinsics: k(),
            poses: [(1, Pose::identity())].into_iter().collect(),
            measurements: vec![m, ok],
        };
        let (lifted, drops) = lift_to_world(&bundle);
        assert_eq!(lifted.len(), 1);
        assert_eq!(drops.total(), 1);
        assert_eq!(drops.behind_camera, 1);
    }

    #[test]
    fn lift_orders_by_frame_then_input() {
        let pose = Pose::new(UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3), Vector3::new(1.0, 2.0, 0.5));
        let a = wall(2, Vector3::new(0.0, 0.0, -1.0), 2.0);
        let b = wall(1, Vector3::new(0.1, 0.0, -1.0), 3.0);
        let c = wall(2, Vector3::new(0.0, 0.1, -1.0), 4.0);
        let bundle = SequenceBundle {
            intrinsics: k(),
            poses: [(1, pose), (2, pose)].into_iter().collect(),
            measurements: vec![a.clone(), b.clone(), c.clone()],
        };
        let (lifted, _) = lift_to_world(&bundle);
        let srcs: Vec<_> = lifted.iter().map(|g| g.source.clone()).collect();
        assert_eq!(srcs, vec![b, a, c]);
    }

    fn at_view_angle(deg: f64) -> GlobalMeasurement {
        let t = deg.to_radians();
        let m = wall(1, Vector3::new(t.sin(), 0.0, -t.cos()), 2.0);
        lift_measurement(&m, &k(), &Pose::identity()).unwrap()
    }

    #[test]
    fn grazing_filter_boundary() {
        let ms = vec![at_view_angle(0.0), at_view_angle(59.0), at_view_angle(61.0), at_view_angle(30.0)];
        let kept = filter_grazing(&ms, 30.0);
        assert_eq!(kept, vec![ms[0].clone(), ms[1].clone(), ms[3].clone()]);
        assert_eq!(filter_grazing(&kept, 30.0), kept);
        // exactly perpendicular to the image plane
        let m = Measurement { plane_cam: Plane::new(Vector3::x(), 2.0).unwrap(), ..wall(1, Vector3::z(), 1.0) };
        assert_eq!(view_angle_deg(&m.plane_cam), 90.0);
    }
}
