use std::f64::consts::{PI, TAU};

use amodal_core::geometry::{
    accessibility_residual, angle_diff, conjugate, connecting_rule, exp_horizontal, is_accessible,
    rule_point, Pose, TangentCoords,
};
use proptest::prelude::*;

fn pose() -> impl Strategy<Value = Pose> {
    (-5.0..5.0f64, -5.0..5.0f64, -10.0..10.0f64).prop_map(|(x, y, t)| Pose::new(x, y, t))
}

fn signed(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo..hi, prop::bool::ANY).prop_map(|(m, s)| if s { m } else { -m })
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn same_pose(p: &Pose, q: &Pose, tol: f64) -> bool {
    (p.x - q.x).abs() <= tol
        && (p.y - q.y).abs() <= tol
        && angle_diff(p.theta, q.theta).abs() <= tol
}

proptest! {
    #![proptest_config(config(10_000))]

    #[test]
    fn conjugation_twist_commutes_with_exp(p in pose(), a in -5.0..5.0f64, b in -TAU..TAU) {
        let lhs = exp_horizontal(&conjugate(&p), TangentCoords::new(a, b));
        let rhs = conjugate(&exp_horizontal(&p, TangentCoords::new(-a, b)));
        prop_assert!(same_pose(&lhs, &rhs, 1e-12), "{lhs:?} vs {rhs:?}");
    }
}

proptest! {
    #![proptest_config(config(2000))]

    #[test]
    fn exp_image_is_accessible(p in pose(), a in -5.0..5.0f64, b in -PI..PI) {
        let q = exp_horizontal(&p, TangentCoords::new(a, b));
        prop_assert!(is_accessible(&p, &q, 1e-9));
    }

    #[test]
    fn exp_identifies_points_on_lines_through_origin(
        p in pose(),
        a in 0.1..4.0f64,
        b in signed(0.2, 3.0),
        k in prop::sample::select(vec![-2i32, -1, 1, 2]),
    ) {
        let b2 = b + TAU * k as f64;
        let q1 = exp_horizontal(&p, TangentCoords::new(a, b));
        let q2 = exp_horizontal(&p, TangentCoords::new(a * b2 / b, b2));
        prop_assert!(same_pose(&q1, &q2, 1e-9), "{q1:?} vs {q2:?}");
        // off the line through the origin the images differ
        let q3 = exp_horizontal(&p, TangentCoords::new(1.2 * a * b2 / b, b2));
        prop_assert!(!same_pose(&q1, &q3, 1e-6));
        // a rotation that is not a multiple of a turn changes θ
        let q4 = exp_horizontal(&p, TangentCoords::new(a, b + 0.5));
        prop_assert!(!same_pose(&q1, &q4, 1e-6));
    }

    #[test]
    fn connecting_rule_reproduces_endpoints(
        p in pose(),
        a in signed(0.05, 4.0),
        b in -3.0..3.0f64,
    ) {
        let q = exp_horizontal(&p, TangentCoords::new(a, b));
        let conn = connecting_rule(&p, &q).unwrap();
        let best = conn
            .candidates()
            .iter()
            .map(|(_, r)| r.start().max_deviation(&p).max(r.end().max_deviation(&q)))
            .fold(f64::INFINITY, f64::min);
        prop_assert!(best <= 1e-10, "endpoint error {best}");
        for (_, r) in conn.candidates() {
            let (lo, hi) = r.interval();
            for i in 0..=8 {
                let s = lo + (hi - lo) * i as f64 / 8.0;
                let pt = rule_point(&r, s).unwrap();
                prop_assert!(r.horizontality_residual(s).abs() <= 1e-8);
                prop_assert!(accessibility_residual(&r.start(), &pt).abs() <= 1e-8);
                prop_assert!(accessibility_residual(&r.end(), &pt).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn conjugate_connections_share_projection(
        p in pose(),
        a in 0.1..4.0f64,
        b in signed(0.05, 3.0),
    ) {
        let q = conjugate(&exp_horizontal(&p, TangentCoords::new(a, b)));
        let c1 = connecting_rule(&p, &conjugate(&q)).unwrap();
        let c2 = connecting_rule(&conjugate(&p), &q).unwrap();
        for (_, r1) in c1.candidates() {
            let matched = c2.candidates().iter().any(|(_, r2)| {
                (0..=10).all(|i| {
                    let l = i as f64 / 10.0;
                    let (u, v) = (r1.point_at_fraction(l), r2.point_at_fraction(l));
                    (u.x - v.x).abs() <= 1e-10 && (u.y - v.y).abs() <= 1e-10
                })
            });
            prop_assert!(matched, "no matching projection for {r1:?}");
        }
    }
}
