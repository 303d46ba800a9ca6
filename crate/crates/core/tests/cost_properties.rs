mod common;

use common::test_constants;
use mlm_core::{CostConstants, CostKind, Interval, SeparableCost, TargetBox, TargetPoint};
use proptest::prelude::*;

fn mlm(c: CostConstants, z: (f64, f64), theta: (f64, f64)) -> SeparableCost {
    let ybox = TargetBox::new(Interval::new(z.0, z.1).unwrap(), Interval::new(theta.0, theta.1).unwrap()).unwrap();
    SeparableCost::new(CostKind::Mlm(c), Interval::new(0.1, 0.9).unwrap(), ybox).unwrap()
}

fn costs() -> Vec<SeparableCost> {
    let sg_box = TargetBox::new(Interval::new(0.1, 0.9).unwrap(), Interval::new(0.5, 2.0).unwrap()).unwrap();
    let earth = CostConstants::earth();
    let solid = earth.omega * earth.a * earth.a;
    vec![
        SeparableCost::sg2d(Interval::new(0.0, 1.0).unwrap(), sg_box).unwrap(),
        mlm(test_constants(), (1.0, 4.0), (0.5, 2.0)),
        mlm(earth, (0.5 * solid, 1.1 * solid), (250.0, 350.0)),
    ]
}

/// Point of the cost's domain from unit-interval coordinates.
fn point(cost: &SeparableCost, u: [f64; 4], p_scale: f64) -> (f64, f64, TargetPoint) {
    let b = cost.domain();
    let y = cost.target_box();
    (
        b.lo + u[0] * b.len(),
        u[1] * p_scale,
        TargetPoint::new(y.z.lo + u[2] * y.z.len(), y.theta.lo + u[3] * y.theta.len()),
    )
}

fn p_scale(cost: &SeparableCost) -> f64 {
    cost.constants().map_or(3.0, |c| 3.0 * c.p_min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn inverse_roundtrip(which in 0usize..3, u in prop::array::uniform4(0.0f64..1.0)) {
        let cost = &costs()[which];
        let (s, p, y) = point(cost, u, p_scale(cost));
        let sigma = cost.eval(s, p, y).unwrap();
        let back = cost.q_inverse(s, y, sigma).unwrap();
        // Absolute tolerance scaled by the pressure unit of the cost.
        let unit = cost.constants().map_or(1.0, |c| c.p_min);
        prop_assert!((back - p).abs() <= 1e-10 * unit.max(1.0) * (1.0 + p / unit), "{} vs {}", back, p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn nonnegative_and_unbounded(which in 0usize..3, u in prop::array::uniform4(0.0f64..1.0)) {
        let cost = &costs()[which];
        let (s, p, y) = point(cost, u, p_scale(cost));
        let c0 = cost.eval(s, p, y).unwrap();
        prop_assert!(c0 >= 0.0 && c0.is_finite());
        let p_r = cost.constants().map_or(1.0, |c| c.p_r);
        let far = cost.eval(s, 1e6 * p_r, y).unwrap();
        let farther = cost.eval(s, 1e12 * p_r, y).unwrap();
        prop_assert!(far > c0, "{} vs {}", far, c0);
        prop_assert!(farther > 10.0 * far, "{} vs {}", farther, far);
    }

    #[test]
    fn gradient_matches_central_differences(which in 0usize..3, u in prop::array::uniform4(0.02f64..0.98)) {
        let cost = &costs()[which];
        let (s, p, y) = point(cost, u, p_scale(cost));
        let grad = cost.grad_x(s, p, y).unwrap();
        prop_assert!(grad[1] > 0.0);
        let hs = 1e-6;
        let hp = 1e-6 * (1.0 + p);
        let ds = (cost.eval(s + hs, p, y).unwrap() - cost.eval(s - hs, p, y).unwrap()) / (2.0 * hs);
        let dp = (cost.eval(s, p + hp, y).unwrap() - cost.eval(s, p - hp, y).unwrap()) / (2.0 * hp);
        let norm = grad[0].hypot(grad[1]);
        let c = cost.eval(s, p, y).unwrap();
        // Central differences lose about c·1e-16/h to cancellation.
        let slack = 1e-6 * norm + 1e-9 * c;
        prop_assert!((ds - grad[0]).abs() <= slack, "ds {} vs {}", ds, grad[0]);
        prop_assert!((dp - grad[1]).abs() <= slack, "dp {} vs {}", dp, grad[1]);
    }

    #[test]
    fn lipschitz_in_s(which in 1usize..3, u in prop::array::uniform4(0.0f64..1.0), v in 0.0f64..1.0) {
        let cost = &costs()[which];
        let (s1, p, y) = point(cost, u, p_scale(cost));
        let b = cost.domain();
        let s2 = b.lo + v * b.len();
        let lip = cost.s_lipschitz_bound().unwrap();
        let diff = (cost.eval(s1, p, y).unwrap() - cost.eval(s2, p, y).unwrap()).abs();
        prop_assert!(diff <= lip * (s1 - s2).abs() * (1.0 + 1e-12) + 1e-12 * diff.max(1.0));
    }
}

#[test]
fn lipschitz_bound_closed_form() {
    let cost = mlm(test_constants(), (1.0, 4.0), (0.5, 2.0));
    // z_max² / (a² ε₁²) + Ω² a² with z_max = 4, a = 2, ε₁ = 0.1, Ω = 1.
    assert!((cost.s_lipschitz_bound().unwrap() - (16.0 / (4.0 * 0.01) + 4.0)).abs() < 1e-9);
}
