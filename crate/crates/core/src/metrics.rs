//! Evaluation metrics: plane regression losses, normal and plane-location
//! error statistics, 2D layout pixel error and detection AP.

use std::fmt::Write as _;

use nalgebra::{Point2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{backproject_pixel, BBox, Intrinsics, Plane};
use crate::layout::LabelImage;
use crate::measurements::{Klass, Measurement};

/// Weight of the plane regression terms in the detector's combined loss.
/// Kept for downstream users; the detector itself is not part of this crate.
pub const PLANE_LOSS_WEIGHT: f64 = 0.05;

/// Angular accuracy thresholds, degrees.
pub const NORMAL_THRESHOLDS_DEG: [f64; 3] = [11.25, 22.5, 30.0];
/// Plane-location accuracy thresholds, metres.
pub const LOCATION_THRESHOLDS_M: [f64; 3] = [0.2, 0.5, 1.0];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty input")]
    EmptyInput,
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricsError::EmptyBatch);
    }
    Ok(())
}

/// Negative mean cosine similarity of matched unit normals.
pub fn loss_norm(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64, MetricsError> {
    check_lengths(pred.len(), gt.len())?;
    // p·g = 1 - |p - g|²/2 for unit vectors; exactly 1 for equal inputs
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| 1.0 - 0.5 * (p - g).norm_squared()).sum();
    Ok(-sum / pred.len() as f64)
}

/// Mean squared error of plane offsets.
pub fn loss_d(pred: &[f64], gt: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(pred.len(), gt.len())?;
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalErrorStats {
    pub mean: f64,
    pub median: f64,
    pub rms: f64,
    pub acc_11_25: f64,
    pub acc_22_5: f64,
    pub acc_30: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneLocationStats {
    pub mean: f64,
    pub median: f64,
    pub acc_0_2: f64,
    pub acc_0_5: f64,
    pub acc_1_0: f64,
}

/// Lower middle element for even counts.
fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

fn percent_below(values: &[f64], t: f64) -> f64 {
    100.0 * values.iter().filter(|&&x| x < t).count() as f64 / values.len() as f64
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Angle between two plane normals in degrees (no sign folding).
pub fn normal_angle_deg(pred: &Plane, gt: &Plane) -> f64 {
    // atan2 stays exact near zero where acos loses half the digits
    let (a, b) = (pred.normal(), gt.normal());
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

pub fn normal_error_stats(pairs: &[(Plane, Plane)]) -> Result<NormalErrorStats, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let a: Vec<f64> = pairs.iter().map(|(p, g)| normal_angle_deg(p, g)).collect();
    let [t0, t1, t2] = NORMAL_THRESHOLDS_DEG;
    Ok(NormalErrorStats {
        mean: mean(&a),
        median: lower_median(&a),
        rms: (a.iter().map(|x| x * x).sum::<f64>() / a.len() as f64).sqrt(),
        acc_11_25: percent_below(&a, t0),
        acc_22_5: percent_below(&a, t1),
        acc_30: percent_below(&a, t2),
    })
}

/// One predicted instance for the plane-location score.
#[derive(Debug, Clone, Copy)]
pub struct LocationItem<'a> {
    pub pred: Plane,
    pub bbox: BBox,
    pub intrinsics: &'a Intrinsics,
    pub gt: Plane,
}

/// Mean distance to `gt` of the bbox pixels back-projected onto `pred`,
/// sampling every `stride`-th pixel centre. `None` if no pixel back-projects.
pub fn plane_location_delta(item: &LocationItem<'_>, stride: usize) -> Option<f64> {
    let stride = stride.max(1);
    let k = item.intrinsics;
    let b = item.bbox.clamp_to(k);
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (col, row)) in b.pixels(k).enumerate() {
        if i % stride != 0 {
            continue;
        }
        let px = Point2::new(f64::from(col) + 0.5, f64::from(row) + 0.5);
        if let Ok(x) = backproject_pixel(&px, k, &item.pred) {
            sum += item.gt.signed_distance(&x).abs();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneLocationResult {
    pub stats: PlaneLocationStats,
    /// Per-instance score, `None` for dropped instances.
    pub deltas: Vec<Option<f64>>,
    pub dropped: usize,
}

pub fn plane_location_stats(items: &[LocationItem<'_>], stride: usize) -> Result<PlaneLocationResult, MetricsError> {
    let deltas: Vec<Option<f64>> = items.par_iter().map(|it| plane_location_delta(it, stride)).collect();
    let d: Vec<f64> = deltas.iter().flatten().copied().collect();
    if d.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let [t0, t1, t2] = LOCATION_THRESHOLDS_M;
    Ok(PlaneLocationResult {
        stats: PlaneLocationStats {
            mean: mean(&d),
            median: lower_median(&d),
            acc_0_2: percent_below(&d, t0),
            acc_0_5: percent_below(&d, t1),
            acc_1_0: percent_below(&d, t2),
        },
        dropped: deltas.len() - d.len(),
        deltas,
    })
}

/// Minimum-cost assignment of every row to a distinct column.
/// Requires `rows <= cols`; returns the column of each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return vec![];
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows <= cols");
    // potentials formulation, 1-based with a virtual column 0
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; m + 1]);
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] > 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Optimal relabeling of predicted instances to ground-truth classes;
/// `map[i]` is the class for predicted label `i`. Background (0) is never
/// permuted. Every instance takes a distinct class; only when instances
/// outnumber classes are the surplus ones left as background.
pub fn assign_labels(pred: &LabelImage, gt: &LabelImage) -> Result<Vec<u32>, MetricsError> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(MetricsError::DimensionMismatch(pred.width, pred.height, gt.width, gt.height));
    }
    let np = pred.max_label() as usize;
    let nc = gt.max_label() as usize;
    let mut overlap = vec![vec![0u64; nc + 1]; np + 1];
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        overlap[p as usize][g as usize] += 1;
    }
    // cost relative to leaving the instance as background; zero-cost dummy
    // columns absorb surplus instances
    let cost: Vec<Vec<f64>> = (1..=np)
        .map(|i| {
            let mut row: Vec<f64> = (1..=nc).map(|c| overlap[i][0] as f64 - overlap[i][c] as f64).collect();
            row.resize(nc.max(np), 0.0);
            row
        })
        .collect();
    let cols = hungarian(&cost);
    let mut map = vec![0u32; np + 1];
    for (i, &c) in cols.iter().enumerate() {
        if c < nc {
            map[i + 1] = c as u32 + 1;
        }
    }
    Ok(map)
}

/// Percentage of pixels whose optimally relabeled prediction disagrees with
/// the ground-truth class.
pub fn pixel_error_2d(pred: &LabelImage, gt: &LabelImage) -> Result<f64, MetricsError> {
    let map = assign_labels(pred, gt)?;
    let total = pred.labels.len();
    if total == 0 {
        return Ok(0.0);
    }
    let wrong = pred.labels.iter().zip(&gt.labels).filter(|(&p, &g)| map[p as usize] != g).count();
    Ok(100.0 * wrong as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub image: u64,
    pub klass: Klass,
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub image: u64,
    pub klass: Klass,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    /// `None` when the class has no ground truth.
    pub wall: Option<f64>,
    pub floor_ceiling: Option<f64>,
    pub map: Option<f64>,
}

/// All-point interpolated average precision for one class.
pub fn average_precision(preds: &[ScoredBox], gts: &[GtBox], iou_min: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut tp = Vec::with_capacity(order.len());
    for &i in &order {
        let p = &preds[i];
        let best =
            gts.iter().enumerate().filter(|(_, g)| g.image == p.image).map(|(j, g)| (j, p.bbox.iou(&g.bbox))).fold(
                None,
                |acc: Option<(usize, f64)>, (j, iou)| match acc {
                    Some((_, b)) if b >= iou => acc,
                    _ => Some((j, iou)),
                },
            );
        let hit = match best {
            Some((j, iou)) if iou >= iou_min && !taken[j] => {
                taken[j] = true;
                true
            }
            _ => false,
        };
        tp.push(hit);
    }
    let npos = gts.len() as f64;
    let (mut recall, mut precision) = (Vec::new(), Vec::new());
    let (mut ctp, mut cfp) = (0.0, 0.0);
    for hit in tp {
        if hit {
            ctp += 1.0;
        } else {
            cfp += 1.0;
        }
        recall.push(ctp / npos);
        precision.push(ctp / (ctp + cfp));
    }
    // precision envelope, then area under the step curve
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    Some(ap)
}

pub fn detection_ap(preds: &[ScoredBox], gts: &[GtBox], iou_min: f64) -> ApReport {
    let per_class = |k: Klass| {
        let p: Vec<ScoredBox> = preds.iter().filter(|b| b.klass == k).copied().collect();
        let g: Vec<GtBox> = gts.iter().filter(|b| b.klass == k).copied().collect();
        average_precision(&p, &g, iou_min)
    };
    let wall = per_class(Klass::Wall);
    let floor_ceiling = per_class(Klass::FloorCeiling);
    let defined: Vec<f64> = [wall, floor_ceiling].into_iter().flatten().collect();
    let map = (!defined.is_empty()).then(|| mean(&defined));
    ApReport { wall, floor_ceiling, map }
}

/// Greedy one-to-one matching of predicted to ground-truth detections of the
/// same frame and class: predictions by descending score, each taking the
/// free ground truth of highest IoU if it reaches `iou_min`.
pub fn match_detections(pred: &[Measurement], gt: &[Measurement], iou_min: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].score.total_cmp(&pred[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; gt.len()];
    let mut out = Vec::new();
    for i in order {
        let p = &pred[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt.iter().enumerate() {
            if taken[j] || g.frame_id != p.frame_id || g.klass != p.klass {
                continue;
            }
            let iou = p.bbox.iou(&g.bbox);
            if iou >= iou_min && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneEvalReport {
    pub matched: usize,
    pub unmatched_pred: usize,
    pub unmatched_gt: usize,
    pub normal: NormalErrorStats,
    pub location: PlaneLocationStats,
    pub location_dropped: usize,
}

/// Matches detections and computes both plane statistics.
pub fn evaluate_planes(
    pred: &[Measurement],
    gt: &[Measurement],
    k: &Intrinsics,
    iou_min: f64,
    stride: usize,
) -> Result<PlaneEvalReport, MetricsError> {
    let matches = match_detections(pred, gt, iou_min);
    if matches.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let pairs: Vec<(Plane, Plane)> = matches.iter().map(|&(i, j)| (pred[i].plane_cam, gt[j].plane_cam)).collect();
    let items: Vec<LocationItem<'_>> = matches
        .iter()
        .map(|&(i, j)| LocationItem { pred: pred[i].plane_cam, bbox: pred[i].bbox, intrinsics: k, gt: gt[j].plane_cam })
        .collect();
    let loc = plane_location_stats(&items, stride)?;
    Ok(PlaneEvalReport {
        matched: matches.len(),
        unmatched_pred: pred.len() - matches.len(),
        unmatched_gt: gt.len() - matches.len(),
        normal: normal_error_stats(&pairs)?,
        location: loc.stats,
        location_dropped: loc.dropped,
    })
}

/// Aligned text tables: normal error then plane location.
pub fn format_plane_report(r: &PlaneEvalReport) -> String {
    let mut s = String::new();
    writeln!(s, "matched {}  unmatched_pred {}  unmatched_gt {}", r.matched, r.unmatched_pred, r.unmatched_gt).unwrap();
    writeln!(s).unwrap();
    writeln!(s, "normal error (deg)").unwrap();
    writeln!(s, "{:>10} {:>10} {:>10} {:>10} {:>10} {:>10}", "mean", "median", "rms", "11.25", "22.5", "30").unwrap();
    let n = &r.normal;
    writeln!(
        s,
        "{:>10.4} {:>10.4} {:>10.4} {:>10.2} {:>10.2} {:>10.2}",
        n.mean, n.median, n.rms, n.acc_11_25, n.acc_22_5, n.acc_30
    )
    .unwrap();
    writeln!(s).unwrap();
    writeln!(s, "plane location (m)").unwrap();
    writeln!(s, "{:>10} {:>10} {:>10} {:>10} {:>10}", "mean", "median", "0.2", "0.5", "1").unwrap();
    let l = &r.location;
    writeln!(s, "{:>10.4} {:>10.4} {:>10.2} {:>10.2} {:>10.2}", l.mean, l.median, l.acc_0_2, l.acc_0_5, l.acc_1_0)
        .unwrap();
    s
}
