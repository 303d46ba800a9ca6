#![allow(dead_code)]

use mlm_core::{CostConstants, CostKind, DiscreteMeasure, ExtendedProblem, Interval, SeparableCost, TargetPoint};
use rand::Rng;

pub fn test_constants() -> CostConstants {
    CostConstants { a: 2.0, omega: 1.0, cp: 1.0, p_min: 1.0, p_r: 1.0, kappa: 2.0 / 7.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Sg2d,
    Mlm,
}

/// SG2D on `[0, 1]` with `δ_{(0.5, 1)}`.
pub fn worked_problem() -> ExtendedProblem {
    let nu = DiscreteMeasure::new(vec![TargetPoint::new(0.5, 1.0)], vec![1.0]).unwrap();
    let cost = SeparableCost::sg2d(Interval::new(0.0, 1.0).unwrap(), nu.bounding_box().unwrap()).unwrap();
    ExtendedProblem::new(cost, nu).unwrap()
}

/// Random measure and cost with `n` atoms.
///
/// SG2D lives on `B = [0, 1]`, MLM uses the test constants on `B = [0.1, 0.9]`.
pub fn random_instance(rng: &mut impl Rng, n: usize, family: Family) -> (SeparableCost, DiscreteMeasure) {
    let (z_range, theta_range, b) = match family {
        Family::Sg2d => ((0.1, 0.9), (0.5, 2.0), Interval::new(0.0, 1.0).unwrap()),
        Family::Mlm => ((1.5, 3.5), (0.8, 2.0), Interval::new(0.1, 0.9).unwrap()),
    };
    let points: Vec<TargetPoint> = (0..n)
        .map(|_| TargetPoint::new(rng.gen_range(z_range.0..z_range.1), rng.gen_range(theta_range.0..theta_range.1)))
        .collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let nu = DiscreteMeasure::new(points, raw.iter().map(|m| m / total).collect()).unwrap();
    let ybox = nu.bounding_box().unwrap();
    let cost = match family {
        Family::Sg2d => SeparableCost::sg2d(b, ybox).unwrap(),
        Family::Mlm => SeparableCost::new(CostKind::Mlm(test_constants()), b, ybox).unwrap(),
    };
    (cost, nu)
}

pub fn random_problem(rng: &mut impl Rng, n: usize, family: Family) -> ExtendedProblem {
    let (cost, nu) = random_instance(rng, n, family);
    ExtendedProblem::new(cost, nu).unwrap()
}
