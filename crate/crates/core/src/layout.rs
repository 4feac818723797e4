//! Room layouts, mesh export and single-frame 2D layout rendering.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use nalgebra::{Point2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{plane_section, CandidateSegment, SceneBounds};
use crate::geometry::{backproject_pixel, Intrinsics, PlanarPolygon, Plane};
use crate::measurements::Measurement;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("layout has no walls")]
    EmptyLayout,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallSegment {
    pub cluster_id: usize,
    pub polygon: PlanarPolygon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomLayout {
    pub walls: Vec<WallSegment>,
    pub floor: Plane,
    pub ceiling: Plane,
    pub bounds: SceneBounds,
}

impl RoomLayout {
    pub fn wall_count(&self) -> usize {
        self.walls.len()
    }

    pub fn total_wall_area(&self) -> f64 {
        self.walls.iter().map(|w| w.polygon.area()).sum()
    }

    /// Distinct wall planes, one per cluster, in first-seen order.
    pub fn wall_planes(&self) -> Vec<(usize, Plane)> {
        let mut out: Vec<(usize, Plane)> = Vec::new();
        for w in &self.walls {
            if !out.iter().any(|(id, _)| *id == w.cluster_id) {
                out.push((w.cluster_id, *w.polygon.plane()));
            }
        }
        out
    }
}

/// Collects the accepted candidates into a layout.
pub fn assemble(
    candidates: &[CandidateSegment],
    floor: Plane,
    ceiling: Plane,
    bounds: SceneBounds,
) -> Result<RoomLayout, LayoutError> {
    let walls: Vec<WallSegment> = candidates
        .iter()
        .filter(|c| c.accepted)
        .map(|c| WallSegment { cluster_id: c.cluster_id, polygon: c.polygon.clone() })
        .collect();
    if walls.is_empty() {
        return Err(LayoutError::EmptyLayout);
    }
    Ok(RoomLayout { walls, floor, ceiling, bounds })
}

/// `%.{digits}g`-style formatting.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    let s = format!("{:.*e}", digits - 1, x);
    // rounding can bump the exponent (9.99..e0 -> 1.00e1)
    let (_, e) = s.split_once('e').expect("exponent");
    let exp = e.parse::<i32>().unwrap_or(exp);
    if exp < -5 || exp >= digits as i32 {
        let (m, _) = s.split_once('e').unwrap();
        let m = if m.contains('.') { m.trim_end_matches('0').trim_end_matches('.') } else { m };
        return format!("{m}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    let f = format!("{x:.decimals$}");
    if f.contains('.') {
        f.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        f
    }
}

/// A named face group of the exported mesh.
struct MeshPart {
    name: String,
    vertices: Vec<Vector3<f64>>,
}

fn mesh_parts(layout: &RoomLayout) -> Vec<MeshPart> {
    let mut parts: Vec<MeshPart> = layout
        .walls
        .iter()
        .enumerate()
        .map(|(i, w)| MeshPart {
            name: format!("wall_{i}_cluster_{}", w.cluster_id),
            vertices: w.polygon.vertices_3d(),
        })
        .collect();
    for (name, plane) in [("floor", &layout.floor), ("ceiling", &layout.ceiling)] {
        if let Some(poly) = plane_section(plane, &layout.bounds) {
            parts.push(MeshPart { name: name.into(), vertices: poly.vertices_3d() });
        }
    }
    parts
}

/// Writes the layout as Wavefront OBJ: one group per wall, floor and
/// ceiling, each polygon fan-triangulated. `header` lines become comments.
pub fn write_obj<W: Write>(layout: &RoomLayout, header: &[String], out: &mut W) -> Result<(), LayoutError> {
    if layout.walls.is_empty() {
        return Err(LayoutError::EmptyLayout);
    }
    let mut s = format!("# room-layout {}\n", env!("CARGO_PKG_VERSION"));
    for line in header {
        writeln!(s, "# {line}").unwrap();
    }
    let mut base = 1;
    for part in mesh_parts(layout) {
        writeln!(s, "g {}", part.name).unwrap();
        for v in &part.vertices {
            writeln!(
                s,
                "v {} {} {}",
                format_significant(v.x, 9),
                format_significant(v.y, 9),
                format_significant(v.z, 9)
            )
            .unwrap();
        }
        for k in 1..part.vertices.len().saturating_sub(1) {
            writeln!(s, "f {} {} {}", base, base + k, base + k + 1).unwrap();
        }
        base += part.vertices.len();
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

pub fn export_mesh(layout: &RoomLayout, header: &[String], path: &Path) -> Result<(), LayoutError> {
    let mut buf = Vec::new();
    write_obj(layout, header, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// A parsed OBJ group: vertices and triangles (0-based, global indices).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjGroup {
    pub name: String,
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

/// Reads back the subset of OBJ that [`write_obj`] produces.
pub fn parse_obj(text: &str) -> Result<Vec<ObjGroup>, LayoutError> {
    let mut groups: Vec<ObjGroup> = Vec::new();
    let mut count = 0;
    for (i, line) in text.lines().enumerate() {
        let err = |reason: &str| LayoutError::Parse { line: i + 1, reason: reason.into() };
        let mut it = line.split_whitespace();
        match it.next() {
            Some("g") => {
                groups.push(ObjGroup { name: it.next().unwrap_or("").into(), vertices: vec![], triangles: vec![] })
            }
            Some("v") => {
                let c: Vec<f64> = it.map(str::parse).collect::<Result<_, _>>().map_err(|_| err("bad vertex"))?;
                if c.len() != 3 {
                    return Err(err("vertex needs 3 coordinates"));
                }
                groups
                    .last_mut()
                    .ok_or_else(|| err("vertex outside group"))?
                    .vertices
                    .push(Vector3::new(c[0], c[1], c[2]));
                count += 1;
            }
            Some("f") => {
                let idx: Vec<usize> = it.map(str::parse).collect::<Result<_, _>>().map_err(|_| err("bad face"))?;
                if idx.len() != 3 || idx.iter().any(|&j| j == 0 || j > count) {
                    return Err(err("face must reference 3 known vertices"));
                }
                groups.last_mut().ok_or_else(|| err("face outside group"))?.triangles.push([
                    idx[0] - 1,
                    idx[1] - 1,
                    idx[2] - 1,
                ]);
            }
            _ => {}
        }
    }
    Ok(groups)
}

/// Per-pixel instance labels with a depth buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelImage {
    pub width: u32,
    pub height: u32,
    /// Row-major; 0 is background.
    pub labels: Vec<u32>,
    /// Row-major camera-frame depth in metres, infinite where unlabeled.
    pub depth: Vec<f64>,
}

impl LabelImage {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, labels: vec![0; n], depth: vec![f64::INFINITY; n] }
    }

    pub fn from_labels(width: u32, height: u32, labels: Vec<u32>) -> Self {
        assert_eq!(labels.len(), width as usize * height as usize);
        let depth = labels.iter().map(|&l| if l > 0 { 1.0 } else { f64::INFINITY }).collect();
        Self { width, height, labels, depth }
    }

    pub fn get(&self, col: u32, row: u32) -> u32 {
        self.labels[row as usize * self.width as usize + col as usize]
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

/// Back-projects every bbox pixel of each detection onto its plane and keeps,
/// per pixel, the nearest hit (ties go to the lower detection index).
/// Labels are detection index + 1.
pub fn render_layout2d(measurements: &[Measurement], k: &Intrinsics) -> LabelImage {
    let (w, h) = (k.width, k.height);
    let rows: Vec<(Vec<u32>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut labels = vec![0u32; w as usize];
            let mut depth = vec![f64::INFINITY; w as usize];
            for (idx, m) in measurements.iter().enumerate() {
                let b = &m.bbox;
                let yc = f64::from(row) + 0.5;
                if yc < b.y0 || yc > b.y1 {
                    continue;
                }
                for (col, _) in crate::geometry::BBox::new(b.x0, yc - 0.5, b.x1, yc + 0.5).pixels(k) {
                    let px = Point2::new(f64::from(col) + 0.5, yc);
                    let Ok(p) = backproject_pixel(&px, k, &m.plane_cam) else { continue };
                    let c = col as usize;
                    if p.z < depth[c] {
                        depth[c] = p.z;
                        labels[c] = idx as u32 + 1;
                    }
                }
            }
            (labels, depth)
        })
        .collect();
    let mut img = LabelImage::new(w, h);
    for (r, (labels, depth)) in rows.into_iter().enumerate() {
        let off = r * w as usize;
        img.labels[off..off + w as usize].copy_from_slice(&labels);
        img.depth[off..off + w as usize].copy_from_slice(&depth);
    }
    img
}

/// ASCII PGM (P2) of the label values.
pub fn format_pgm(img: &LabelImage) -> String {
    let maxval = img.max_label().clamp(1, 65535);
    let mut s = format!("P2\n{} {}\n{}\n", img.width, img.height, maxval);
    for row in img.labels.chunks(img.width.max(1) as usize) {
        let line: Vec<String> = row.iter().map(u32::to_string).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_pgm(text: &str) -> Result<LabelImage, LayoutError> {
    let err = |reason: &str| LayoutError::Parse { line: 0, reason: reason.into() };
    let mut tokens = text.lines().map(|l| l.split('#').next().unwrap_or("")).flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err(err("not an ASCII PGM (P2)"));
    }
    let mut num = || -> Result<u32, LayoutError> {
        tokens.next().ok_or_else(|| err("truncated"))?.parse().map_err(|_| err("bad number"))
    };
    let (w, h, maxval) = (num()?, num()?, num()?);
    let n = w as usize * h as usize;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let v = num()?;
        if v > maxval {
            return Err(err("value above maxval"));
        }
        labels.push(v);
    }
    Ok(LabelImage::from_labels(w, h, labels))
}

/// Fixed visualization palette; background is black.
pub const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
];

/// ASCII PPM (P3) colouring of the labels.
pub fn format_ppm(img: &LabelImage) -> String {
    let mut s = format!("P3\n{} {}\n255\n", img.width, img.height);
    for row in img.labels.chunks(img.width.max(1) as usize) {
        let line: Vec<String> = row
            .iter()
            .map(|&l| {
                let c = if l == 0 { [0, 0, 0] } else { PALETTE[(l as usize - 1) % PALETTE.len()] };
                format!("{} {} {}", c[0], c[1], c[2])
            })
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}
