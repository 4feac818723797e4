use nalgebra::{Point2, Vector3};
use serde::{Deserialize, Serialize};

use super::{tol, GeometryError, PlanarPolygon, Plane};

/// Pinhole intrinsics. Pixel coordinates are continuous with `(0, 0)` at the
/// top-left image corner and pixel `(i, j)` centred at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_owned()));
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return bad("focal lengths must be positive");
        }
        if !(self.cx >= 0.0 && self.cx < f64::from(self.width)) {
            return bad("cx outside [0, width)");
        }
        if !(self.cy >= 0.0 && self.cy < f64::from(self.height)) {
            return bad("cy outside [0, height)");
        }
        Ok(())
    }

    /// Viewing ray `((u - cx) / fx, (v - cy) / fy, 1)` of a pixel.
    pub fn ray(&self, px: &Point2<f64>) -> Vector3<f64> {
        Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point; `None` at or behind the camera centre.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Point2<f64>> {
        (p.z > 0.0).then(|| Point2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn contains(&self, px: &Point2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= f64::from(self.width) && px.y <= f64::from(self.height)
    }

    pub fn full_bbox(&self) -> BBox {
        BBox::new(0.0, 0.0, f64::from(self.width), f64::from(self.height))
    }
}

/// Axis-aligned pixel rectangle, serialized as `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_valid(&self) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1
    }

    pub fn within(&self, k: &Intrinsics) -> bool {
        self.x0 >= 0.0 && self.y0 >= 0.0 && self.x1 <= f64::from(k.width) && self.y1 <= f64::from(k.height)
    }

    /// Corners in image order: top-left, top-right, bottom-right, bottom-left.
    pub fn corners(&self) -> [Point2<f64>; 4] {
        [
            Point2::new(self.x0, self.y0),
            Point2::new(self.x1, self.y0),
            Point2::new(self.x1, self.y1),
            Point2::new(self.x0, self.y1),
        ]
    }

    pub fn intersection(&self, other: &BBox) -> BBox {
        BBox::new(self.x0.max(other.x0), self.y0.max(other.y0), self.x1.min(other.x1), self.y1.min(other.y1))
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other).area();
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    pub fn clamp_to(&self, k: &Intrinsics) -> BBox {
        let (w, h) = (f64::from(k.width), f64::from(k.height));
        BBox::new(self.x0.clamp(0.0, w), self.y0.clamp(0.0, h), self.x1.clamp(0.0, w), self.y1.clamp(0.0, h))
    }

    /// Integer pixels whose centres lie inside the box, as `(column, row)`.
    pub fn pixels(&self, k: &Intrinsics) -> impl Iterator<Item = (u32, u32)> {
        let range = |lo: f64, hi: f64, max: u32| {
            let start = (lo - 0.5).ceil().max(0.0) as u32;
            let end = ((hi - 0.5).floor() + 1.0).clamp(0.0, f64::from(max)) as u32;
            start..end.max(start)
        };
        let cols = range(self.x0, self.x1, k.width);
        let rows = range(self.y0, self.y1, k.height);
        rows.flat_map(move |r| cols.clone().map(move |c| (c, r)))
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

/// Intersects the viewing ray of `px` with `plane` (camera frame).
pub fn backproject_pixel(px: &Point2<f64>, k: &Intrinsics, plane: &Plane) -> Result<Vector3<f64>, GeometryError> {
    let r = k.ray(px);
    let denom = plane.normal().dot(&r);
    if denom.abs() < tol::RAY_PARALLEL {
        return Err(GeometryError::RayParallel);
    }
    let s = -plane.offset() / denom;
    if !(s > 0.0) {
        return Err(GeometryError::BehindCamera);
    }
    Ok(r * s)
}

/// Back-projects the four bbox corners onto `plane` (camera frame).
pub fn bbox_to_patch(bbox: &BBox, k: &Intrinsics, plane: &Plane) -> Result<PlanarPolygon, GeometryError> {
    let mut pts = Vec::with_capacity(4);
    for c in bbox.corners() {
        pts.push(backproject_pixel(&c, k, plane)?);
    }
    let poly = PlanarPolygon::from_points(*plane, &pts);
    let area = poly.area();
    if !(area >= tol::MIN_PATCH_AREA) {
        return Err(GeometryError::DegeneratePatch(area));
    }
    Ok(poly)
}
