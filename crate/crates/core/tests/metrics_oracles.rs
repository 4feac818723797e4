use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use room_layout::geometry::{BBox, Intrinsics, Plane};
use room_layout::layout::LabelImage;
use room_layout::measurements::Klass;
use room_layout::metrics::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_unit(r: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n < 1.0 {
            return v / n;
        }
    }
}

/// Every injective map of `rows` into `cols`, by recursion.
fn permutations(rows: usize, cols: usize) -> Vec<Vec<usize>> {
    fn go(row: usize, rows: usize, cols: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if row == rows {
            out.push(cur.clone());
            return;
        }
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                cur.push(c);
                go(row + 1, rows, cols, used, cur, out);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(0, rows, cols, &mut vec![false; cols], &mut Vec::new(), &mut out);
    out
}

#[test]
fn losses_match_direct_sums() {
    let mut r = rng(1);
    for _ in 0..50 {
        let n = r.random_range(1..20);
        let p: Vec<_> = (0..n).map(|_| random_unit(&mut r)).collect();
        let g: Vec<_> = (0..n).map(|_| random_unit(&mut r)).collect();
        let mut cos = 0.0;
        for i in 0..n {
            cos += p[i].x * g[i].x + p[i].y * g[i].y + p[i].z * g[i].z;
        }
        assert!((loss_norm(&p, &g).unwrap() + cos / n as f64).abs() < 1e-12);

        let pd: Vec<f64> = (0..n).map(|_| r.random_range(0.0..5.0)).collect();
        let gd: Vec<f64> = (0..n).map(|_| r.random_range(0.0..5.0)).collect();
        let mse = pd.iter().zip(&gd).fold(0.0, |acc, (a, b)| acc + (a - b).powi(2)) / n as f64;
        assert!((loss_d(&pd, &gd).unwrap() - mse).abs() < 1e-12);
    }
    assert!(loss_norm(&[], &[]).is_err());
    assert!(loss_d(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn identical_normals_give_minus_one() {
    let v = vec![Vector3::x(), Vector3::y(), Vector3::new(0.6, 0.0, 0.8)];
    assert_eq!(loss_norm(&v, &v).unwrap(), -1.0);
}

#[test]
fn hungarian_matches_enumeration() {
    let mut r = rng(2);
    for _ in 0..300 {
        let rows = r.random_range(1..=5);
        let cols = r.random_range(rows..=6);
        let cost: Vec<Vec<f64>> =
            (0..rows).map(|_| (0..cols).map(|_| r.random_range(-10.0..10.0f64).round()).collect()).collect();
        let total = |assign: &[usize]| assign.iter().enumerate().map(|(i, &c)| cost[i][c]).sum::<f64>();
        let got = hungarian(&cost);
        let mut seen = got.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), rows, "assignment not injective");
        let best = permutations(rows, cols).iter().map(|p| total(p)).fold(f64::INFINITY, f64::min);
        assert!((total(&got) - best).abs() < 1e-9);
    }
}

fn random_labels(r: &mut ChaCha8Rng, w: u32, h: u32, max: u32) -> LabelImage {
    // blocky images so overlaps are structured, not pure noise
    let bw = 3;
    let blocks: Vec<u32> = (0..(w / bw + 1) * (h / bw + 1)).map(|_| r.random_range(0..=max)).collect();
    let labels = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            if r.random_bool(0.1) {
                r.random_range(0..=max)
            } else {
                blocks[((y / bw) * (w / bw + 1) + x / bw) as usize]
            }
        })
        .collect();
    LabelImage::from_labels(w, h, labels)
}

/// Minimum error over every one-to-one relabeling; instances only stay
/// background when they outnumber the classes.
fn brute_pixel_error(pred: &LabelImage, gt: &LabelImage) -> f64 {
    let np = pred.labels.iter().copied().max().unwrap_or(0) as usize;
    let nc = gt.labels.iter().copied().max().unwrap_or(0) as usize;
    // column c < nc is class c+1, anything beyond is background
    let mut best = usize::MAX;
    for perm in permutations(np, nc.max(np)) {
        let mut map = vec![0u32; np + 1];
        for (i, &c) in perm.iter().enumerate() {
            if c < nc {
                map[i + 1] = c as u32 + 1;
            }
        }
        let wrong = pred.labels.iter().zip(&gt.labels).filter(|(&p, &g)| map[p as usize] != g).count();
        best = best.min(wrong);
    }
    100.0 * best as f64 / pred.labels.len() as f64
}

#[test]
fn pixel_error_matches_enumeration() {
    let mut r = rng(3);
    for _ in 0..60 {
        let (mp, mg) = (r.random_range(0..=4), r.random_range(0..=3));
        let pred = random_labels(&mut r, 12, 9, mp);
        let gt = random_labels(&mut r, 12, 9, mg);
        let got = pixel_error_2d(&pred, &gt).unwrap();
        assert!((got - brute_pixel_error(&pred, &gt)).abs() < 1e-9, "{got}");
    }
}

#[test]
fn pixel_error_is_zero_for_a_relabeling() {
    let mut r = rng(4);
    let gt = random_labels(&mut r, 20, 15, 4);
    let perm = [0u32, 3, 1, 4, 2];
    let pred = LabelImage::from_labels(20, 15, gt.labels.iter().map(|&l| perm[l as usize]).collect());
    assert_eq!(pixel_error_2d(&pred, &gt).unwrap(), 0.0);
    assert!(pixel_error_2d(&LabelImage::new(3, 3), &LabelImage::new(4, 3)).is_err());
}

/// Precision-recall points and interpolated area, rebuilt from the ranked
/// hit list without sharing code with the library.
fn brute_ap(preds: &[ScoredBox], gts: &[GtBox], iou_min: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let mut ranked: Vec<&ScoredBox> = preds.iter().collect();
    ranked.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let mut used = vec![false; gts.len()];
    let mut hits = Vec::new();
    for p in ranked {
        let mut best = None;
        let mut best_iou = -1.0;
        for (j, g) in gts.iter().enumerate() {
            if g.image != p.image {
                continue;
            }
            let iou = p.bbox.iou(&g.bbox);
            if iou > best_iou {
                best_iou = iou;
                best = Some(j);
            }
        }
        let hit = matches!(best, Some(j) if best_iou >= iou_min && !used[j]);
        if hit {
            used[best.unwrap()] = true;
        }
        hits.push(hit);
    }
    let pts: Vec<(f64, f64)> = (1..=hits.len())
        .map(|k| {
            let tp = hits[..k].iter().filter(|&&h| h).count() as f64;
            (tp / gts.len() as f64, tp / k as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (k, &(rec, _)) in pts.iter().enumerate() {
        let p_interp = pts[k..].iter().map(|&(_, p)| p).fold(0.0, f64::max);
        ap += (rec - prev) * p_interp;
        prev = rec;
    }
    Some(ap)
}

fn random_box(r: &mut ChaCha8Rng) -> BBox {
    let x = r.random_range(0.0..80.0);
    let y = r.random_range(0.0..80.0);
    BBox::new(x, y, x + r.random_range(5.0..30.0), y + r.random_range(5.0..30.0))
}

#[test]
fn ap_matches_brute_force() {
    let mut r = rng(5);
    for _ in 0..200 {
        let ng = r.random_range(0..8);
        let gts: Vec<GtBox> = (0..ng)
            .map(|_| GtBox { image: r.random_range(0..3), klass: Klass::Wall, bbox: random_box(&mut r) })
            .collect();
        let mut preds: Vec<ScoredBox> = Vec::new();
        for g in &gts {
            if r.random_bool(0.7) {
                let b = g.bbox;
                let j = r.random_range(-3.0..3.0);
                preds.push(ScoredBox {
                    image: g.image,
                    klass: Klass::Wall,
                    // distinct scores keep the ranking unambiguous
                    score: r.random_range(0.0..1.0),
                    bbox: BBox::new(b.x0 + j, b.y0 - j, b.x1 + j, b.y1),
                });
            }
        }
        for _ in 0..r.random_range(0..5) {
            preds.push(ScoredBox {
                image: r.random_range(0..3),
                klass: Klass::Wall,
                score: r.random_range(0.0..1.0),
                bbox: random_box(&mut r),
            });
        }
        let got = average_precision(&preds, &gts, 0.5);
        let want = brute_ap(&preds, &gts, 0.5);
        match (got, want) {
            (None, None) => {}
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12, "{a} vs {b}"),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn perfect_detections_give_unit_ap() {
    let mut r = rng(6);
    let gts: Vec<GtBox> = (0..10)
        .map(|i| GtBox {
            image: i,
            klass: if i % 2 == 0 { Klass::Wall } else { Klass::FloorCeiling },
            bbox: random_box(&mut r),
        })
        .collect();
    let preds: Vec<ScoredBox> = gts
        .iter()
        .enumerate()
        .map(|(i, g)| ScoredBox { image: g.image, klass: g.klass, score: i as f64, bbox: g.bbox })
        .collect();
    let rep = detection_ap(&preds, &gts, 0.5);
    assert_eq!(rep.wall, Some(1.0));
    assert_eq!(rep.floor_ceiling, Some(1.0));
    assert_eq!(rep.map, Some(1.0));
    let walls_only: Vec<GtBox> = gts.iter().filter(|g| g.klass == Klass::Wall).copied().collect();
    let rep = detection_ap(&preds, &walls_only, 0.5);
    assert_eq!(rep.floor_ceiling, None);
    assert_eq!(rep.map, Some(1.0));
}

/// Per-pixel distance with the ray intersection written out by hand.
fn brute_location(pred: &Plane, gt: &Plane, bbox: &BBox, k: &Intrinsics) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for row in 0..k.height {
        for col in 0..k.width {
            let (u, v) = (col as f64 + 0.5, row as f64 + 0.5);
            if u < bbox.x0 || u > bbox.x1 || v < bbox.y0 || v > bbox.y1 {
                continue;
            }
            let dir = [(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0];
            let pn = pred.normal();
            let denom = pn.x * dir[0] + pn.y * dir[1] + pn.z * dir[2];
            if denom.abs() < 1e-9 {
                continue;
            }
            let t = -pred.offset() / denom;
            if t <= 0.0 {
                continue;
            }
            let x = [t * dir[0], t * dir[1], t * dir[2]];
            let gn = gt.normal();
            sum += (gn.x * x[0] + gn.y * x[1] + gn.z * x[2] + gt.offset()).abs();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[test]
fn plane_location_matches_per_pixel_sum() {
    let k = Intrinsics::new(60.0, 55.0, 40.0, 30.0, 80, 60).unwrap();
    let mut r = rng(7);
    for _ in 0..100 {
        let facing = |r: &mut ChaCha8Rng| (Vector3::new(0.0, 0.0, -1.0) + 0.6 * random_unit(r)).normalize();
        let pred = Plane::new(facing(&mut r), r.random_range(0.5..5.0)).unwrap();
        let gt = Plane::new(facing(&mut r), r.random_range(0.5..5.0)).unwrap();
        let x0 = r.random_range(-10.0..70.0);
        let y0 = r.random_range(-10.0..50.0);
        let bbox = BBox::new(x0, y0, x0 + r.random_range(1.0..40.0), y0 + r.random_range(1.0..30.0));
        let got = plane_location_delta(&LocationItem { pred, bbox, intrinsics: &k, gt }, 1);
        let want = brute_location(&pred, &gt, &bbox, &k);
        match (got, want) {
            (None, None) => {}
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9 * (1.0 + b), "{a} vs {b}"),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn location_zero_for_exact_planes_and_drops_counted() {
    let k = Intrinsics::new(60.0, 60.0, 40.0, 30.0, 80, 60).unwrap();
    let front = Plane::new(Vector3::new(0.0, 0.0, -1.0), 2.0).unwrap();
    // plane behind the camera: nothing back-projects
    let behind = Plane::new(Vector3::new(0.0, 0.0, 1.0), 2.0).unwrap();
    let bbox = BBox::new(10.0, 10.0, 30.0, 20.0);
    let items = [
        LocationItem { pred: front, bbox, intrinsics: &k, gt: front },
        LocationItem { pred: behind, bbox, intrinsics: &k, gt: front },
    ];
    let res = plane_location_stats(&items, 1).unwrap();
    assert_eq!(res.dropped, 1);
    assert_eq!(res.deltas[0], Some(0.0));
    assert_eq!(res.stats.acc_0_2, 100.0);
}

#[test]
fn normal_stats_are_order_invariant() {
    let mut r = rng(8);
    let mut pairs: Vec<(Plane, Plane)> = (0..41)
        .map(|_| {
            let n = random_unit(&mut r);
            let m = (n + 0.4 * random_unit(&mut r)).normalize();
            (Plane::new(n, 1.0).unwrap(), Plane::new(m, 1.0).unwrap())
        })
        .collect();
    let a = normal_error_stats(&pairs).unwrap();
    pairs.reverse();
    let b = normal_error_stats(&pairs).unwrap();
    assert!((a.mean - b.mean).abs() < 1e-9);
    assert_eq!(a.median, b.median);
    assert!((a.rms - b.rms).abs() < 1e-9);
    assert_eq!((a.acc_11_25, a.acc_22_5, a.acc_30), (b.acc_11_25, b.acc_22_5, b.acc_30));

    // rms² = mean² + population variance
    let ang: Vec<f64> = pairs.iter().map(|(p, g)| normal_angle_deg(p, g)).collect();
    let var = ang.iter().map(|x| (x - a.mean).powi(2)).sum::<f64>() / ang.len() as f64;
    assert!((a.rms * a.rms - (a.mean * a.mean + var)).abs() < 1e-8);
    assert!(a.acc_11_25 <= a.acc_22_5 && a.acc_22_5 <= a.acc_30);
    assert!(normal_error_stats(&[]).is_err());
}
