use barnmap_core::geometry::{convex_hull, signed_area, Point};
use barnmap_core::objects::{min_rotated_rect, MinRotatedRect};
use proptest::prelude::*;

/// The optimal rectangle has a side collinear with a hull edge, so checking every edge
/// direction against every point is exact.
fn edge_direction_oracle(points: &[Point]) -> f64 {
    let hull = convex_hull(points);
    let n = hull.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let d = hull[(i + 1) % n].sub(hull[i]);
        let u = Point::new(d.x / d.norm(), d.y / d.norm());
        let v = Point::new(-u.y, u.x);
        let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            let (a, b) = (p.dot(u), p.dot(v));
            lo_u = lo_u.min(a);
            hi_u = hi_u.max(a);
            lo_v = lo_v.min(b);
            hi_v = hi_v.max(b);
        }
        best = best.min((hi_u - lo_u) * (hi_v - lo_v));
    }
    best
}

fn contains(rect: &MinRotatedRect, p: Point, tol: f64) -> bool {
    let t = rect.angle_deg.to_radians();
    let u = Point::new(t.cos(), t.sin());
    let v = Point::new(-u.y, u.x);
    let d = p.sub(rect.center);
    d.dot(u).abs() <= rect.long_side / 2.0 + tol && d.dot(v).abs() <= rect.short_side / 2.0 + tol
}

fn point_cloud() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30)
        .prop_map(|v| v.into_iter().map(|(x, y)| Point::new(x, y)).collect())
        .prop_filter("non-degenerate hull", |pts: &Vec<Point>| {
            let h = convex_hull(pts);
            h.len() >= 3 && signed_area(&h) > 1e-3
        })
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

proptest! {
    #[test]
    fn calipers_match_edge_oracle(pts in point_cloud()) {
        let r = min_rotated_rect(&pts).unwrap();
        let want = edge_direction_oracle(&pts);
        prop_assert!((r.area() - want).abs() <= 1e-9 * want, "{} vs {}", r.area(), want);
    }

    #[test]
    fn rectangle_encloses_points(pts in point_cloud()) {
        let r = min_rotated_rect(&pts).unwrap();
        prop_assert!(r.aspect_ratio() >= 1.0);
        prop_assert!((0.0..180.0).contains(&r.angle_deg));
        prop_assert!(r.area() >= signed_area(&convex_hull(&pts)) * (1.0 - 1e-12));
        for p in &pts {
            prop_assert!(contains(&r, *p, 1e-7));
        }
    }

    #[test]
    fn translation_invariance(pts in point_cloud(), dx in -1e5f64..1e5, dy in -1e5f64..1e5) {
        let a = min_rotated_rect(&pts).unwrap();
        let moved: Vec<Point> = pts.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect();
        let b = min_rotated_rect(&moved).unwrap();
        prop_assert!((a.area() - b.area()).abs() <= 1e-6 * a.area());
    }

    #[test]
    fn rotation_equivariance(
        w in 5.0f64..30.0,
        ratio in 1.5f64..12.0,
        base in 0.0f64..180.0,
        theta in 0.0f64..360.0,
        inner in prop::collection::vec((-0.49f64..0.49, -0.49f64..0.49), 0..10),
    ) {
        // A rotated rectangle with interior points has a unique minimum rectangle.
        let l = w * ratio;
        let rect = MinRotatedRect { center: Point::new(3.0, -7.0), long_side: l, short_side: w, angle_deg: base };
        let t = base.to_radians();
        let (u, v) = (Point::new(t.cos(), t.sin()), Point::new(-t.sin(), t.cos()));
        let mut pts: Vec<Point> = rect.corners().to_vec();
        for (a, b) in inner {
            pts.push(Point::new(3.0 + u.x * a * l + v.x * b * w, -7.0 + u.y * a * l + v.y * b * w));
        }
        let r0 = min_rotated_rect(&pts).unwrap();
        let rotated: Vec<Point> = pts.iter().map(|p| p.rotate(theta.to_radians())).collect();
        let r1 = min_rotated_rect(&rotated).unwrap();
        prop_assert!((r0.area() - l * w).abs() <= 1e-9 * l * w);
        prop_assert!((r1.area() - r0.area()).abs() <= 1e-9 * r0.area());
        prop_assert!((r1.aspect_ratio() - ratio).abs() <= 1e-9 * ratio);
        prop_assert!(angle_diff(r0.angle_deg, base) < 1e-7);
        prop_assert!(angle_diff(r1.angle_deg, base + theta) < 1e-7, "{} vs {}", r1.angle_deg, base + theta);
    }
}

#[test]
fn degenerate_inputs_are_errors() {
    let line = vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(2.0, 2.0)];
    assert!(min_rotated_rect(&line).is_err());
    assert!(min_rotated_rect(&[Point::new(0.0, 0.0)]).is_err());
}

#[test]
fn axis_aligned_barn() {
    let pts = vec![
        Point::new(0.0, 0.0),
        Point::new(155.0, 0.0),
        Point::new(155.0, 14.0),
        Point::new(0.0, 14.0),
    ];
    let r = min_rotated_rect(&pts).unwrap();
    assert_eq!(r.area(), 2170.0);
    assert!((r.aspect_ratio() - 155.0 / 14.0).abs() < 1e-12);
    assert_eq!(r.angle_deg, 0.0);
}
