//! Vertically separable transport costs.
//!
//! Every admissible cost has the form `c((s,p),y) = g(s,y) + w(y) h(p)` with
//! `w > 0` on the target box and `h` strictly increasing and unbounded on
//! `[0, ∞)`. For fixed `s` the cost of every atom is therefore an affine
//! function of `h(p)`, which is what lets [`crate::envelope`] compute Laguerre
//! cells column by column with a lower envelope of lines.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the MLM energy density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConstants {
    /// Planetary radius (m).
    pub a: f64,
    /// Rotation rate (1/s).
    pub omega: f64,
    /// Specific heat at constant pressure (J/(kg K)).
    pub cp: f64,
    /// Minimum-pressure offset (Pa).
    pub p_min: f64,
    /// Reference pressure (Pa).
    pub p_r: f64,
    /// Poisson exponent.
    pub kappa: f64,
}

impl CostConstants {
    pub const KAPPA_DIATOMIC: f64 = 2.0 / 7.0;

    /// Standard Earth values.
    pub fn earth() -> Self {
        CostConstants {
            a: 6.371e6,
            omega: 7.2921e-5,
            cp: 1004.6,
            p_min: 100.0,
            p_r: 1e5,
            kappa: Self::KAPPA_DIATOMIC,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("a", self.a),
            ("omega", self.omega),
            ("cp", self.cp),
            ("p_min", self.p_min),
            ("p_r", self.p_r),
            ("kappa", self.kappa),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidCost(format!("constant {name} must be positive, got {v}")));
            }
        }
        if self.kappa >= 1.0 {
            return Err(Error::InvalidCost(format!("kappa must lie in (0,1), got {}", self.kappa)));
        }
        Ok(())
    }

    /// Zonal wind `u` of a parcel with angular momentum `z` at sine-latitude `s`.
    pub fn zonal_wind(&self, s: f64, z: f64) -> f64 {
        let cos_lat = (1.0 - s * s).sqrt();
        z / (self.a * cos_lat) - self.omega * self.a * cos_lat
    }

    /// Angular momentum of a parcel with zonal wind `u` at sine-latitude `s`.
    pub fn angular_momentum(&self, s: f64, u: f64) -> f64 {
        let cos_lat = (1.0 - s * s).sqrt();
        u * self.a * cos_lat + self.omega * self.a * self.a * cos_lat * cos_lat
    }

    /// Temperature at pressure deviation `p` for potential temperature `theta`.
    pub fn temperature(&self, p: f64, theta: f64) -> f64 {
        theta * ((p + self.p_min) / self.p_r).powf(self.kappa)
    }

    /// Closed-form twist constant `ℓ = (κ Cp θ_min / p_r) (p_min / (2 p_r))^(κ-1)`.
    ///
    /// This is the size of `∂c/∂p` at `p = -p_min/2`, the lower edge of the
    /// extension neighbourhood. `∂c/∂p` decreases in `p`, so on a capped strip
    /// the gradient norm only exceeds `ℓ` where the `s`-derivative carries
    /// enough of it; [`SeparableCost::twist_margin`] measures the real margin.
    pub fn analytic_twist_bound(&self, theta_min: f64) -> f64 {
        let k = self.kappa;
        k * self.cp * theta_min / self.p_r * (self.p_min / (2.0 * self.p_r)).powf(k - 1.0)
    }
}

impl Default for CostConstants {
    fn default() -> Self {
        Self::earth()
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Domain(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// `n` equispaced nodes including both endpoints.
    pub fn linspace(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        let n = n.max(1);
        (0..n).map(move |k| {
            if n == 1 {
                0.5 * (self.lo + self.hi)
            } else if k + 1 == n {
                self.hi
            } else {
                self.lo + self.len() * k as f64 / (n - 1) as f64
            }
        })
    }
}

/// A target point `y = (z, θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPoint {
    /// Angular momentum density (m²/s), or the first coordinate of a test cost.
    pub z: f64,
    /// Potential temperature (K), or the second coordinate of a test cost.
    pub theta: f64,
}

impl TargetPoint {
    pub fn new(z: f64, theta: f64) -> Self {
        TargetPoint { z, theta }
    }
}

/// Axis-aligned target box `Y = [z_lo, z_hi] × [θ_lo, θ_hi]` inside `(0, ∞)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetBox {
    pub z: Interval,
    pub theta: Interval,
}

impl TargetBox {
    pub fn new(z: Interval, theta: Interval) -> Result<Self> {
        if z.lo <= 0.0 || theta.lo <= 0.0 {
            return Err(Error::InvalidCost(format!(
                "target box must lie strictly inside (0,inf)^2, got z >= {}, theta >= {}",
                z.lo, theta.lo
            )));
        }
        Ok(TargetBox { z, theta })
    }

    /// Smallest box containing all `points`.
    pub fn bounding(points: &[TargetPoint]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidMeasure("no points".into()));
        }
        let (mut zl, mut zh, mut tl, mut th) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            zl = zl.min(p.z);
            zh = zh.max(p.z);
            tl = tl.min(p.theta);
            th = th.max(p.theta);
        }
        TargetBox::new(Interval::new(zl, zh)?, Interval::new(tl, th)?)
    }

    /// Smallest box containing both boxes.
    pub fn union(&self, other: &TargetBox) -> TargetBox {
        TargetBox {
            z: Interval { lo: self.z.lo.min(other.z.lo), hi: self.z.hi.max(other.z.hi) },
            theta: Interval { lo: self.theta.lo.min(other.theta.lo), hi: self.theta.hi.max(other.theta.hi) },
        }
    }

    pub fn contains(&self, y: TargetPoint) -> bool {
        self.z.contains(y.z) && self.theta.contains(y.theta)
    }

    fn corners(&self) -> [TargetPoint; 4] {
        [
            TargetPoint::new(self.z.lo, self.theta.lo),
            TargetPoint::new(self.z.lo, self.theta.hi),
            TargetPoint::new(self.z.hi, self.theta.lo),
            TargetPoint::new(self.z.hi, self.theta.hi),
        ]
    }
}

/// The pieces of a user-defined separable cost.
///
/// Implementations must keep `h` strictly increasing and unbounded, `h_inv`
/// its exact inverse on `[h(0), ∞)`, and `h_integral` the exact integral of `h`.
pub trait SeparableParts: Send + Sync + fmt::Debug {
    fn g(&self, s: f64, y: TargetPoint) -> f64;
    fn dg_ds(&self, s: f64, y: TargetPoint) -> f64;
    fn w(&self, y: TargetPoint) -> f64;
    fn h(&self, p: f64) -> f64;
    fn dh_dp(&self, p: f64) -> f64;
    fn h_inv(&self, v: f64) -> f64;
    fn h_integral(&self, p_lo: f64, p_hi: f64) -> f64;

    /// Minimiser of `g(·, y)` over the reals, when known in closed form.
    fn g_argmin(&self, _y: TargetPoint) -> Option<f64> {
        None
    }
}

#[derive(Clone)]
pub enum CostKind {
    /// MLM energy density `½u² + Cp T` in `(s, p)` coordinates.
    Mlm(CostConstants),
    /// Two-dimensional analogue of the free-surface semi-geostrophic cost:
    /// `½(s - y₁)² + y₂ p`.
    Sg2d,
    Custom(Arc<dyn SeparableParts>),
}

impl fmt::Debug for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostKind::Mlm(c) => f.debug_tuple("Mlm").field(c).finish(),
            CostKind::Sg2d => f.write_str("Sg2d"),
            CostKind::Custom(parts) => f.debug_tuple("Custom").field(parts).finish(),
        }
    }
}

impl CostKind {
    pub fn name(&self) -> &'static str {
        match self {
            CostKind::Mlm(_) => "mlm",
            CostKind::Sg2d => "sg2d",
            CostKind::Custom(_) => "custom",
        }
    }
}

/// Sampling grid for [`SeparableCost::twist_margin`]; all node counts include endpoints.
#[derive(Debug, Clone, Copy)]
pub struct SampleGrid {
    pub s: usize,
    pub p: usize,
    pub z: usize,
    pub theta: usize,
    pub p_max: f64,
}

#[derive(Debug, Clone)]
pub struct SeparableCost {
    kind: CostKind,
    domain: Interval,
    target_box: TargetBox,
}

impl SeparableCost {
    pub fn new(kind: CostKind, domain: Interval, target_box: TargetBox) -> Result<Self> {
        if domain.len() <= 0.0 {
            return Err(Error::InvalidCost(format!("domain [{}, {}] has empty interior", domain.lo, domain.hi)));
        }
        TargetBox::new(target_box.z, target_box.theta)?;
        if let CostKind::Mlm(c) = &kind {
            c.validate()?;
            if domain.lo <= 0.0 || domain.hi >= 1.0 {
                return Err(Error::InvalidCost(format!(
                    "MLM domain must lie inside (0,1) in sine-latitude, got [{}, {}]",
                    domain.lo, domain.hi
                )));
            }
        }
        let cost = SeparableCost { kind, domain, target_box };
        for y in target_box.corners() {
            let w = cost.w(y);
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidCost(format!("w(y) must be positive on the target box, got {w} at {y:?}")));
            }
        }
        Ok(cost)
    }

    /// MLM cost on `B = [eps0, 1 - eps1]`.
    pub fn mlm(constants: CostConstants, eps0: f64, eps1: f64, target_box: TargetBox) -> Result<Self> {
        if !(eps0 > 0.0 && eps0 < 0.5 && eps1 > 0.0 && eps1 < 0.5) {
            return Err(Error::InvalidCost(format!("eps0, eps1 must lie in (0, 1/2), got {eps0}, {eps1}")));
        }
        Self::new(CostKind::Mlm(constants), Interval::new(eps0, 1.0 - eps1)?, target_box)
    }

    pub fn sg2d(domain: Interval, target_box: TargetBox) -> Result<Self> {
        Self::new(CostKind::Sg2d, domain, target_box)
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn target_box(&self) -> TargetBox {
        self.target_box
    }

    pub fn constants(&self) -> Option<&CostConstants> {
        match &self.kind {
            CostKind::Mlm(c) => Some(c),
            _ => None,
        }
    }

    /// Same cost on a different target box.
    pub fn with_target_box(&self, target_box: TargetBox) -> Result<Self> {
        Self::new(self.kind.clone(), self.domain, target_box)
    }

    // Unchecked separable parts. Callers are responsible for the domain.

    #[inline]
    pub fn g(&self, s: f64, y: TargetPoint) -> f64 {
        match &self.kind {
            CostKind::Mlm(c) => {
                let u = c.zonal_wind(s, y.z);
                0.5 * u * u
            }
            CostKind::Sg2d => 0.5 * (s - y.z) * (s - y.z),
            CostKind::Custom(parts) => parts.g(s, y),
        }
    }

    #[inline]
    pub fn dg_ds(&self, s: f64, y: TargetPoint) -> f64 {
        match &self.kind {
            CostKind::Mlm(c) => {
                let one_minus = 1.0 - s * s;
                y.z * y.z * s / (c.a * c.a * one_minus * one_minus) - c.omega * c.omega * c.a * c.a * s
            }
            CostKind::Sg2d => s - y.z,
            CostKind::Custom(parts) => parts.dg_ds(s, y),
        }
    }

    #[inline]
    pub fn w(&self, y: TargetPoint) -> f64 {
        match &self.kind {
            CostKind::Mlm(c) => c.cp * y.theta,
            CostKind::Sg2d => y.theta,
            CostKind::Custom(parts) => parts.w(y),
        }
    }

    #[inline]
    pub fn h(&self, p: f64) -> f64 {
        match &self.kind {
            CostKind::Mlm(c) => ((p + c.p_min) / c.p_r).powf(c.kappa),
            CostKind::Sg2d => p,
            CostKind::Custom(parts) => parts.h(p),
        }
    }

    #[inline]
    pub fn dh_dp(&self, p: f64) -> f64 {
        match &self.kind {
            CostKind::Mlm(c) => c.kappa / c.p_r * ((p + c.p_min) / c.p_r).powf(c.kappa - 1.0),
            CostKind::Sg2d => 1.0,
            CostKind::Custom(parts) => parts.dh_dp(p),
        }
    }

    /// Inverse of `h`; may return values below zero for `v < h(0)`.
    #[inline]
    pub fn h_inv(&self, v: f64) -> f64 {
        match &self.kind {
            CostKind::Mlm(c) => c.p_r * v.powf(1.0 / c.kappa) - c.p_min,
            CostKind::Sg2d => v,
            CostKind::Custom(parts) => parts.h_inv(v),
        }
    }

    /// `∫_{p_lo}^{p_hi} h(p) dp`.
    #[inline]
    pub fn h_integral(&self, p_lo: f64, p_hi: f64) -> f64 {
        match &self.kind {
            CostKind::Mlm(c) => {
                // u^(k+1) differences via expm1/ln_1p to keep thin cells accurate.
                let e = c.kappa + 1.0;
                let base = p_lo + c.p_min;
                let rel = (p_hi - p_lo) / base;
                c.p_r / e * (base / c.p_r).powf(e) * (e * rel.ln_1p()).exp_m1()
            }
            CostKind::Sg2d => 0.5 * (p_hi - p_lo) * (p_hi + p_lo),
            CostKind::Custom(parts) => parts.h_integral(p_lo, p_hi),
        }
    }

    /// Minimiser of `g(·, y)` over the reals, if known.
    pub fn g_argmin(&self, y: TargetPoint) -> Option<f64> {
        match &self.kind {
            CostKind::Mlm(c) => {
                let cos2 = y.z / (c.omega * c.a * c.a);
                (cos2 < 1.0).then(|| (1.0 - cos2).sqrt())
            }
            CostKind::Sg2d => Some(y.z),
            CostKind::Custom(parts) => parts.g_argmin(y),
        }
    }

    /// Unchecked cost evaluation.
    #[inline]
    pub fn c(&self, s: f64, p: f64, y: TargetPoint) -> f64 {
        self.g(s, y) + self.w(y) * self.h(p)
    }

    /// Unchecked vertical inverse `q(s, y, σ)`.
    #[inline]
    pub fn q(&self, s: f64, y: TargetPoint, sigma: f64) -> f64 {
        let level = (sigma - self.g(s, y)) / self.w(y);
        if level <= self.h(0.0) {
            0.0
        } else {
            self.h_inv(level).max(0.0)
        }
    }

    fn check(&self, s: f64, p: f64, y: TargetPoint) -> Result<()> {
        if !self.domain.contains(s) {
            return Err(Error::Domain(format!("s = {s} outside [{}, {}]", self.domain.lo, self.domain.hi)));
        }
        if !(p >= 0.0 && p.is_finite()) {
            return Err(Error::Domain(format!("pressure deviation must be nonnegative, got {p}")));
        }
        if !self.target_box.contains(y) {
            return Err(Error::Domain(format!("target point {y:?} outside the target box")));
        }
        Ok(())
    }

    /// Energy density at `(s, p)` for target `y`.
    pub fn eval(&self, s: f64, p: f64, y: TargetPoint) -> Result<f64> {
        self.check(s, p, y)?;
        Ok(self.c(s, p, y))
    }

    /// `(∂c/∂s, ∂c/∂p)`.
    pub fn grad_x(&self, s: f64, p: f64, y: TargetPoint) -> Result<[f64; 2]> {
        if s.abs() >= 1.0 && matches!(self.kind, CostKind::Mlm(_)) {
            return Err(Error::Domain(format!("gradient singular at s = {s}")));
        }
        self.check(s, p, y)?;
        Ok([self.dg_ds(s, y), self.w(y) * self.dh_dp(p)])
    }

    /// Pressure deviation at which the column cost reaches `sigma`, clamped at 0.
    pub fn q_inverse(&self, s: f64, y: TargetPoint, sigma: f64) -> Result<f64> {
        self.check(s, 0.0, y)?;
        if !sigma.is_finite() {
            return Err(Error::Domain(format!("cost level must be finite, got {sigma}")));
        }
        Ok(self.q(s, y, sigma))
    }

    /// Sampled minimum of `‖∇ₓc‖` over `B × [0, p_max] × Y`.
    pub fn twist_margin(&self, grid: &SampleGrid) -> Result<f64> {
        if grid.p_max <= 0.0 {
            return Err(Error::Domain(format!("p_max must be positive, got {}", grid.p_max)));
        }
        let p_range = Interval { lo: 0.0, hi: grid.p_max };
        let mut margin = f64::INFINITY;
        for z in self.target_box.z.linspace(grid.z) {
            for theta in self.target_box.theta.linspace(grid.theta) {
                let y = TargetPoint::new(z, theta);
                let w = self.w(y);
                for s in self.domain.linspace(grid.s) {
                    let ds = self.dg_ds(s, y);
                    for p in p_range.linspace(grid.p) {
                        let dp = w * self.dh_dp(p);
                        margin = margin.min(ds.hypot(dp));
                    }
                }
            }
        }
        if !(margin.is_finite() && margin > 0.0) {
            return Err(Error::InvalidCost(format!("cost is not twisted on this domain (margin {margin})")));
        }
        Ok(margin)
    }

    /// Lipschitz constant of `c((·,p),y)` on `B`, uniform in `p` and `y` (MLM only):
    /// `z_max² / (a² ε₁²) + Ω² a²`.
    pub fn s_lipschitz_bound(&self) -> Option<f64> {
        let c = self.constants()?;
        let eps1 = 1.0 - self.domain.hi;
        let z_max = self.target_box.z.hi;
        Some(z_max * z_max / (c.a * c.a * eps1 * eps1) + c.omega * c.omega * c.a * c.a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn test_constants() -> CostConstants {
        CostConstants { a: 2.0, omega: 1.0, cp: 1.0, p_min: 1.0, p_r: 1.0, kappa: 2.0 / 7.0 }
    }

    fn mlm_test_cost() -> SeparableCost {
        let b = TargetBox::new(Interval::new(0.5, 3.0).unwrap(), Interval::new(0.5, 3.0).unwrap()).unwrap();
        SeparableCost::new(CostKind::Mlm(test_constants()), Interval::new(0.1, 0.9).unwrap(), b).unwrap()
    }

    fn sg2d_cost() -> SeparableCost {
        let b = TargetBox::new(Interval::new(0.1, 1.0).unwrap(), Interval::new(0.5, 2.0).unwrap()).unwrap();
        SeparableCost::sg2d(Interval::new(0.0, 1.0).unwrap(), b).unwrap()
    }

    #[test]
    fn mlm_hand_evaluation() {
        let cost = mlm_test_cost();
        let y = TargetPoint::new(1.6, 1.0);
        let v = cost.eval(0.6, 0.0, y).unwrap();
        assert!((v - 1.18).abs() < 1e-14, "{v}");
        let grad = cost.grad_x(0.6, 0.0, y).unwrap();
        assert!((grad[1] - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn sg2d_hand_evaluation() {
        let cost = sg2d_cost();
        assert_eq!(cost.eval(0.3, 0.0, TargetPoint::new(0.3, 1.0)).unwrap(), 0.0);
        let v = cost.eval(0.0, 2.0, TargetPoint::new(0.5, 1.0)).unwrap();
        assert!((v - 2.125).abs() < 1e-15);
        let g = cost.grad_x(0.2, 1.5, TargetPoint::new(0.5, 1.7)).unwrap();
        assert!((g[0] - (0.2 - 0.5)).abs() < 1e-15);
        assert_eq!(g[1], 1.7);
    }

    #[test]
    fn domain_violations_rejected() {
        let cost = mlm_test_cost();
        let y = TargetPoint::new(1.6, 1.0);
        assert!(matches!(cost.eval(0.95, 0.0, y), Err(Error::Domain(_))));
        assert!(matches!(cost.eval(0.5, -1e-3, y), Err(Error::Domain(_))));
        assert!(matches!(cost.eval(0.5, 0.0, TargetPoint::new(4.0, 1.0)), Err(Error::Domain(_))));
        assert!(matches!(cost.grad_x(1.0, 0.0, y), Err(Error::Domain(_))));
        assert!(matches!(cost.q_inverse(0.05, y, 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn q_inverse_branches() {
        let cost = mlm_test_cost();
        let y = TargetPoint::new(1.6, 1.0);
        assert_eq!(cost.q_inverse(0.6, y, 0.1).unwrap(), 0.0);
        let sigma = 0.18 + 2f64.powf(2.0 / 7.0);
        let p = cost.q_inverse(0.6, y, sigma).unwrap();
        assert!((p - 1.0).abs() < 1e-12, "{p}");
    }

    #[test]
    fn h_integral_matches_antiderivative() {
        let cost = mlm_test_cost();
        let c = test_constants();
        let big_h = |p: f64| c.p_r / (c.kappa + 1.0) * ((p + c.p_min) / c.p_r).powf(c.kappa + 1.0);
        for (lo, hi) in [(0.0, 1.0), (0.3, 0.30001), (2.0, 7.5), (1.0, 1.0)] {
            let exact = big_h(hi) - big_h(lo);
            let got = cost.h_integral(lo, hi);
            assert!((got - exact).abs() <= 1e-12 * (1.0 + exact.abs()), "{lo} {hi}: {got} vs {exact}");
        }
        let sg = sg2d_cost();
        assert!((sg.h_integral(0.5, 2.0) - (2.0 - 0.125)).abs() < 1e-15);
    }

    #[test]
    fn zero_wind_for_solid_body_momentum() {
        let c = CostConstants::earth();
        let s: f64 = 0.4;
        let z = c.omega * c.a * c.a * (1.0 - s * s);
        assert!(c.zonal_wind(s, z).abs() < 1e-9);
        assert!((c.angular_momentum(s, 0.0) - z).abs() < 1e-3);
    }

    #[test]
    fn twist_margin_sg2d_bounded_by_theta_min() {
        let cost = sg2d_cost();
        let grid = SampleGrid { s: 33, p: 9, z: 5, theta: 5, p_max: 2.0 };
        let m = cost.twist_margin(&grid).unwrap();
        assert!(m >= cost.target_box().theta.lo);
    }

    #[test]
    fn twist_margin_mlm_exceeds_closed_form_bound() {
        // Box chosen so that u stays positive over B: z > Ω a² (1 - s²) for s ≥ 0.1.
        let b = TargetBox::new(Interval::new(8.0, 9.0).unwrap(), Interval::new(1.0, 2.0).unwrap()).unwrap();
        let cost = SeparableCost::new(CostKind::Mlm(test_constants()), Interval::new(0.1, 0.9).unwrap(), b).unwrap();
        let grid = SampleGrid { s: 64, p: 64, z: 4, theta: 4, p_max: 3.0 };
        let margin = cost.twist_margin(&grid).unwrap();
        let bound = (2.0 / 7.0) * 0.5f64.powf(-5.0 / 7.0);
        assert!((test_constants().analytic_twist_bound(1.0) - bound).abs() < 1e-15);
        assert!(margin >= bound, "{margin} < {bound}");
    }

    #[test]
    fn degenerate_target_box_rejected() {
        let z = Interval::new(0.5, 1.0).unwrap();
        assert!(TargetBox::new(z, Interval::new(0.0, 1.0).unwrap()).is_err());
        let bad = TargetBox { z, theta: Interval { lo: 0.0, hi: 1.0 } };
        assert!(SeparableCost::sg2d(Interval::new(0.0, 1.0).unwrap(), bad).is_err());
    }

    #[test]
    fn mlm_rejects_bad_domain() {
        let b = TargetBox::new(Interval::new(1.0, 2.0).unwrap(), Interval::new(1.0, 2.0).unwrap()).unwrap();
        assert!(SeparableCost::mlm(test_constants(), 0.0, 0.1, b).is_err());
        assert!(SeparableCost::mlm(test_constants(), 0.1, 0.6, b).is_err());
        let mut bad = test_constants();
        bad.kappa = 1.5;
        assert!(SeparableCost::mlm(bad, 0.1, 0.1, b).is_err());
    }
}
