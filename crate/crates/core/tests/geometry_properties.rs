use nalgebra::{Point2, UnitQuaternion, Vector3};
use proptest::prelude::*;
use room_layout::geometry::{
    backproject_pixel, convex_intersection_area, polygon, Intrinsics, PlanarPolygon, Plane, Pose,
};

fn unit_vec() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, 0.0..std::f64::consts::TAU).prop_map(|(z, phi)| {
        let r = (1.0 - z * z).sqrt();
        Vector3::new(r * phi.cos(), r * phi.sin(), z)
    })
}

fn plane() -> impl Strategy<Value = Plane> {
    (unit_vec(), -5.0..5.0f64).prop_map(|(n, d)| Plane::new(n, d).unwrap())
}

fn pose() -> impl Strategy<Value = Pose> {
    (unit_vec(), -3.0..3.0f64, prop::array::uniform3(-4.0..4.0f64)).prop_map(|(axis, angle, t)| {
        let q = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Pose::new(q, Vector3::from(t))
    })
}

fn close(a: &Plane, b: &Plane, tol: f64) -> bool {
    a.to_array().iter().zip(b.to_array()).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn canonical_form_is_idempotent(p in plane()) {
        prop_assert_eq!(Plane::canonicalize(p.to_array()).unwrap(), p);
        prop_assert!(p.offset() >= 0.0);
        prop_assert!((p.normal().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_form_is_scale_invariant(p in plane(), s in prop_oneof![-100.0..-0.01f64, 0.01..100.0f64]) {
        let raw = p.to_array().map(|v| v * s);
        prop_assert!(close(&Plane::canonicalize(raw).unwrap(), &p, 1e-9));
    }

    #[test]
    fn transform_composes(p in plane(), a in pose(), b in pose()) {
        let stepwise = p.transform(&a).transform(&b);
        let composed = p.transform(&b.compose(&a));
        prop_assert!(close(&stepwise, &composed, 1e-9));
    }

    #[test]
    fn transform_round_trips(p in plane(), a in pose()) {
        prop_assert!(close(&p.transform(&a).transform(&a.inverse()), &p, 1e-9));
    }

    #[test]
    fn transformed_points_stay_on_transformed_plane(p in plane(), a in pose(), u in -3.0..3.0f64, v in -3.0..3.0f64) {
        let x = p.frame().lift(&Point2::new(u, v));
        prop_assert!(p.signed_distance(&x).abs() < 1e-9);
        prop_assert!(p.transform(&a).signed_distance(&a.transform_point(&x)).abs() < 1e-9);
    }

    #[test]
    fn projection_round_trips(
        px in 0.5..639.5f64, py in 0.5..479.5f64,
        tilt in unit_vec(), depth in 0.5..10.0f64,
    ) {
        let k = Intrinsics::new(525.0, 525.0, 320.0, 240.0, 640, 480).unwrap();
        // keep the plane facing the camera well away from grazing
        let n = (Vector3::new(0.0, 0.0, -1.0) + 0.5 * tilt).normalize();
        let plane = Plane::from_point_normal(&(Vector3::z() * depth), &n).unwrap();
        let pixel = Point2::new(px, py);
        if let Ok(x) = backproject_pixel(&pixel, &k, &plane) {
            prop_assert!(plane.signed_distance(&x).abs() < 1e-9);
            let back = k.project(&x).unwrap();
            prop_assert!((back - pixel).norm() < 1e-6);
        }
    }

    #[test]
    fn split_preserves_area(
        pts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 3..12),
        a in -1.0..1.0f64, b in -1.0..1.0f64, c in -2.0..2.0f64,
    ) {
        let hull = convex_hull(pts.iter().map(|&(x, y)| Point2::new(x, y)).collect());
        prop_assume!(hull.len() >= 3 && (a.abs() + b.abs()) > 1e-3);
        let (pos, neg) = polygon::split_convex(&hull, a, b, c);
        let total = polygon::area(&pos) + polygon::area(&neg);
        prop_assert!((total - polygon::area(&hull)).abs() < 1e-9 * (1.0 + polygon::area(&hull)));
    }

    #[test]
    fn intersection_area_is_symmetric_and_bounded(
        p in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 3..10),
        q in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 3..10),
    ) {
        let a = convex_hull(p.iter().map(|&(x, y)| Point2::new(x, y)).collect());
        let b = convex_hull(q.iter().map(|&(x, y)| Point2::new(x, y)).collect());
        prop_assume!(a.len() >= 3 && b.len() >= 3);
        let ab = convex_intersection_area(&a, &b);
        let ba = convex_intersection_area(&b, &a);
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ab <= polygon::area(&a).min(polygon::area(&b)) + 1e-9);
        prop_assert!((convex_intersection_area(&a, &a) - polygon::area(&a)).abs() < 1e-9);
    }

    #[test]
    fn patch_transform_keeps_area(p in plane(), a in pose()) {
        let sq = vec![Point2::new(0.0, 0.0), Point2::new(2.0, 0.0), Point2::new(2.0, 1.5), Point2::new(0.0, 1.5)];
        let patch = PlanarPolygon::new(p, p.frame(), sq);
        let moved = patch.transform(&a);
        prop_assert!((moved.area() - 3.0).abs() < 1e-9);
        for v in moved.vertices_3d() {
            prop_assert!(moved.plane().signed_distance(&v).abs() < 1e-9);
        }
    }
}

/// Andrew's monotone chain, CCW, no collinear points.
pub fn convex_hull(mut pts: Vec<Point2<f64>>) -> Vec<Point2<f64>> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Point2<f64>, a: Point2<f64>, b: Point2<f64>| (a - o).perp(&(b - o));
    let mut lower: Vec<Point2<f64>> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 1e-12 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point2<f64>> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 1e-12 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}
