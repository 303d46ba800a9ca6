//! Numerical experiment harnesses: dual gradient checks and stability sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{SeparableCost, TargetPoint};
use crate::dual::{evaluate, initial_weights, solve, SolveOptions};
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, ExtendedProblem};
use crate::quadrature::Midpoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    /// Columns used for the dual value.
    pub n_s: usize,
    /// Columns used for the analytic gradient; `None` means `n_s`.
    pub gradient_n_s: Option<usize>,
    pub samples: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { n_s: 4096, gradient_n_s: None, samples: 5, seed: 0, threshold: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    /// Largest relative error at each sampled weight vector.
    pub per_sample: Vec<f64>,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Compares `m̄ − G(Ψ)` with central differences of `Φ` at random weights
/// around the starting point of the solver.
///
/// The step for weight `i` is `1e-6 · wᵢ · (h(P) − h(0))`; larger steps pick
/// up truncation error from cells that are about to appear. Relative errors
/// use `max(|analytic|, |numeric|, 1e-3 · min m̄)` as the denominator so that
/// components near zero do not dominate.
pub fn gradcheck(problem: &ExtendedProblem, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let cost = problem.cost();
    let n = problem.n();
    let pts = problem.nu().points();
    let h_span_half = cost.h(0.5 * problem.p_cap()) - cost.h(0.0);
    let h_span = cost.h(problem.p_cap()) - cost.h(0.0);
    let mut w: Vec<f64> = pts.iter().map(|&y| cost.w(y)).collect();
    w.push(w.iter().sum::<f64>() / n as f64);
    let target = problem.extended_masses();
    let floor = 1e-3 * problem.min_extended_mass();
    let grad_ns = opts.gradient_n_s.unwrap_or(opts.n_s);
    let base = initial_weights(problem, opts.n_s);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut per_sample = Vec::with_capacity(opts.samples);
    for _ in 0..opts.samples {
        let mut psi = base.clone();
        for i in 0..n {
            psi[i] += rng.gen_range(-0.5..0.5) * w[i] * h_span_half;
        }
        let masses = evaluate(problem, &psi, grad_ns).masses;
        let mut worst = 0.0f64;
        for i in 0..=n {
            let analytic = target[i] - masses[i];
            let eps = 1e-6 * w[i] * h_span;
            let mut plus = psi.clone();
            plus[i] += eps;
            let mut minus = psi.clone();
            minus[i] -= eps;
            let numeric = (evaluate(problem, &plus, opts.n_s).value - evaluate(problem, &minus, opts.n_s).value) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
        per_sample.push(worst);
    }
    let max_rel_error = per_sample.iter().copied().fold(0.0, f64::max);
    Ok(GradcheckReport { per_sample, max_rel_error, threshold: opts.threshold, pass: max_rel_error <= opts.threshold })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationMode {
    /// Move mass along a fixed zero-sum direction of total variation `δ`.
    Mass,
    /// Scale atom coordinates by `1 + δ e` for a fixed direction `e`.
    Position,
}

impl std::str::FromStr for PerturbationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mass" => Ok(PerturbationMode::Mass),
            "position" => Ok(PerturbationMode::Position),
            other => Err(Error::Parse(format!("unknown perturbation mode {other:?} (expected mass or position)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityRow {
    pub delta: f64,
    /// `sup_s |p̄_δ(s) − p̄(s)|` over the quadrature columns.
    pub sup_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub mode: PerturbationMode,
    pub rows: Vec<StabilityRow>,
    /// Each row is at most 1.2 times the previous one.
    pub non_increasing: bool,
}

/// Perturbed copy of `nu`; the direction depends only on `seed` and `n`.
pub fn perturb(nu: &DiscreteMeasure, mode: PerturbationMode, delta: f64, seed: u64) -> Result<DiscreteMeasure> {
    let n = nu.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        PerturbationMode::Mass => {
            if n < 2 {
                return Err(Error::InvalidMeasure("mass perturbation needs at least two atoms".into()));
            }
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mean = raw.iter().sum::<f64>() / n as f64;
            let centred: Vec<f64> = raw.iter().map(|d| d - mean).collect();
            let tv = 0.5 * centred.iter().map(|d| d.abs()).sum::<f64>();
            if tv == 0.0 {
                return Ok(nu.clone());
            }
            let masses: Vec<f64> = nu.masses().iter().zip(&centred).map(|(m, d)| m + delta * d / tv).collect();
            if let Some(i) = masses.iter().position(|&m| m <= 0.0) {
                return Err(Error::InvalidMeasure(format!("perturbation delta = {delta} drives atom {i} to nonpositive mass")));
            }
            let total: f64 = masses.iter().sum();
            DiscreteMeasure::new(nu.points().to_vec(), masses.iter().map(|m| m / total).collect())
        }
        PerturbationMode::Position => {
            let points: Vec<TargetPoint> = nu
                .points()
                .iter()
                .map(|p| {
                    let ez: f64 = rng.gen_range(-1.0..1.0);
                    let et: f64 = rng.gen_range(-1.0..1.0);
                    TargetPoint::new(p.z * (1.0 + delta * ez), p.theta * (1.0 + delta * et))
                })
                .collect();
            DiscreteMeasure::new(points, nu.masses().to_vec())
        }
    }
}

/// Solves the base problem and each perturbed problem, reporting surface deviations.
pub fn stability(
    cost: &SeparableCost,
    nu: &DiscreteMeasure,
    deltas: &[f64],
    mode: PerturbationMode,
    seed: u64,
    opts: &SolveOptions,
) -> Result<StabilityReport> {
    if deltas.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::Domain(format!("deltas must be nonnegative, got {deltas:?}")));
    }
    let base_surface = surface_of(cost, nu, opts)?.0;
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let nu_d = perturb(nu, mode, delta, seed)?;
        let cost_d = cost.with_target_box(cost.target_box().union(&nu_d.bounding_box()?))?;
        let (surface, iterations) = surface_of(&cost_d, &nu_d, opts)?;
        let sup_norm = surface.iter().zip(&base_surface).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        log::info!("stability {mode:?} delta = {delta:e}: sup-norm {sup_norm:.3e}");
        rows.push(StabilityRow { delta, sup_norm, iterations });
    }
    let non_increasing = rows.windows(2).all(|w| w[1].sup_norm <= 1.2 * w[0].sup_norm + 1e-12);
    Ok(StabilityReport { mode, rows, non_increasing })
}

/// Surface `max q(s, yᵢ, Ψᵢ)` at converged weights on the quadrature columns.
fn surface_of(cost: &SeparableCost, nu: &DiscreteMeasure, opts: &SolveOptions) -> Result<(Vec<f64>, usize)> {
    let problem = ExtendedProblem::new(cost.clone(), nu.clone())?;
    let dual = solve(&problem, opts)?;
    if !dual.converged {
        return Err(Error::NotConverged { iterations: dual.iterations, residual: dual.residual });
    }
    let quad = Midpoint::new(cost.domain(), opts.n_s);
    let surface = quad
        .nodes()
        .map(|s| crate::dual::surface_formula(&problem, dual.atom_weights(), 0.0, s).min(problem.p_cap()))
        .collect();
    Ok((surface, dual.iterations))
}
