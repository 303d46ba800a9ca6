//! Concave Kantorovich dual of the extended problem and its maximisation.
//!
//! `Φ(Ψ) = ∫_{B×[0,P]} minⱼ (c̄(x,yⱼ) − Ψⱼ) dx + Σⱼ m̄ⱼ Ψⱼ`, where `c̄` is zero
//! for the reservoir. In `p` every column integral is exact; in `s` the
//! composite midpoint rule is used. `∂Φ/∂Ψⱼ = m̄ⱼ − Gⱼ(Ψ)` with `Gⱼ` the mass
//! of the `j`-th Laguerre cell under the same quadrature.

use std::io::Write;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::{ColumnContext, ColumnScratch, Owner};
use crate::error::{Error, Result};
use crate::measures::{cap_level, ExtendedProblem};
use crate::quadrature::Midpoint;

/// Columns per parallel work unit. Partial sums are combined in chunk order,
/// so results do not depend on the number of worker threads.
const CHUNK: usize = 256;
/// Above this many atoms the inverse Hessian is kept in limited memory.
const DENSE_LIMIT: usize = 2048;
const LBFGS_MEMORY: usize = 30;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Stop once `max |Gⱼ − m̄ⱼ| ≤ tol · min m̄ⱼ`.
    pub tol: f64,
    pub max_iter: usize,
    /// Number of quadrature columns.
    pub n_s: usize,
    /// Allowed `|primal − dual| / (1 + |dual|)` when a state is extracted.
    pub duality_tol: f64,
    /// Record one trace row per iteration.
    pub trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-7, max_iter: 500, n_s: 4096, duality_tol: 1e-6, trace: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub residual: f64,
    pub dual_value: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    /// Weights in input order, reservoir last (always `0`).
    pub psi: Vec<f64>,
    /// Cell masses `G(Ψ)`, same layout as `psi`.
    pub masses: Vec<f64>,
    /// `max |Gⱼ − m̄ⱼ|` over all `n + 1` cells.
    pub residual: f64,
    pub dual_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_s: usize,
    pub rule: String,
    pub tol: f64,
    pub duality_tol: f64,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl DualState {
    /// Weights on the atoms only.
    pub fn atom_weights(&self) -> &[f64] {
        &self.psi[..self.psi.len() - 1]
    }

    pub fn write_trace<W: Write>(&self, writer: W) -> Result<()> {
        write_trace(&self.trace, writer)
    }
}

pub fn write_trace<W: Write>(rows: &[TraceRow], mut writer: W) -> Result<()> {
    writeln!(writer, "iteration,residual,dual_value,step")?;
    for r in rows {
        writeln!(writer, "{},{:.16e},{:.16e},{:.16e}", r.iteration, r.residual, r.dual_value, r.step)?;
    }
    Ok(())
}

/// Dual value and cell masses at one weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub masses: Vec<f64>,
}

/// Evaluates `Φ(Ψ)` and `G(Ψ)` with `n_s` midpoint columns.
///
/// `psi` has length `n + 1` in input order with the reservoir last.
pub fn evaluate(problem: &ExtendedProblem, psi: &[f64], n_s: usize) -> Evaluation {
    let n = problem.n();
    assert_eq!(psi.len(), n + 1, "weight vector must have n + 1 entries");
    let ctx = ColumnContext::new(problem);
    let cost = problem.cost();
    let pts = problem.nu().points();
    let quad = Midpoint::new(cost.domain(), n_s);
    let chunks = n_s.div_ceil(CHUNK);
    let partial: Vec<(f64, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut scratch = ColumnScratch::default();
            let mut value = 0.0;
            let mut masses = vec![0.0; n + 1];
            for k in c * CHUNK..((c + 1) * CHUNK).min(n_s) {
                let s = quad.node(k);
                ctx.pieces_into(s, psi, &mut scratch);
                for piece in &scratch.pieces {
                    let len = piece.p_length();
                    match piece.owner {
                        Owner::Atom(i) => {
                            let y = pts[i];
                            value += (cost.g(s, y) - psi[i]) * len + cost.w(y) * cost.h_integral(piece.p_lo, piece.p_hi);
                            masses[i] += len;
                        }
                        Owner::Reservoir => {
                            value -= psi[n] * len;
                            masses[n] += len;
                        }
                    }
                }
            }
            (value, masses)
        })
        .collect();
    let width = quad.width();
    let mut value = 0.0;
    let mut masses = vec![0.0; n + 1];
    for (v, m) in partial {
        value += v;
        for (acc, x) in masses.iter_mut().zip(m) {
            *acc += x;
        }
    }
    for m in &mut masses {
        *m *= width;
    }
    let target = problem.extended_masses();
    let mut linear = 0.0;
    for &i in problem.order() {
        linear += target[i] * psi[i];
    }
    linear += target[n] * psi[n];
    Evaluation { value: width * value + linear, masses }
}

pub fn dual_value(problem: &ExtendedProblem, psi: &[f64], n_s: usize) -> f64 {
    evaluate(problem, psi, n_s).value
}

pub fn cell_masses(problem: &ExtendedProblem, psi: &[f64], n_s: usize) -> Vec<f64> {
    evaluate(problem, psi, n_s).masses
}

/// `∇Φ = m̄ − G`.
pub fn dual_gradient(problem: &ExtendedProblem, psi: &[f64], n_s: usize) -> Vec<f64> {
    let g = cell_masses(problem, psi, n_s);
    problem.extended_masses().iter().zip(g).map(|(m, g)| m - g).collect()
}

fn max_residual(problem: &ExtendedProblem, masses: &[f64]) -> f64 {
    problem
        .extended_masses()
        .iter()
        .zip(masses)
        .map(|(m, g)| (g - m).abs())
        .fold(0.0, f64::max)
}

/// Starting weights: each atom alone would fill a layer of its own mass
/// above the floor, i.e. `∫_B q(s, yᵢ, Ψᵢ) ds = mᵢ`.
pub fn initial_weights(problem: &ExtendedProblem, n_s: usize) -> Vec<f64> {
    let cost = problem.cost();
    let quad = Midpoint::new(cost.domain(), n_s.min(1024));
    let blen = cost.domain().len();
    let mut psi: Vec<f64> = problem
        .nu()
        .points()
        .iter()
        .zip(problem.nu().masses())
        .map(|(&y, &m)| {
            let layer = |sigma: f64| quad.integrate(|s| cost.q(s, y, sigma));
            let mut lo = quad.nodes().map(|s| cost.c(s, 0.0, y)).fold(f64::INFINITY, f64::min);
            let mut hi = quad.nodes().map(|s| cost.c(s, m / blen, y)).fold(f64::NEG_INFINITY, f64::max);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if layer(mid) < m {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect();
    psi.push(0.0);
    psi
}

enum InverseHessian {
    Dense { h: Vec<f64>, n: usize },
    Limited { pairs: Vec<(Vec<f64>, Vec<f64>, f64)>, gamma: f64 },
}

impl InverseHessian {
    fn new(n: usize, gamma: f64) -> Self {
        if n <= DENSE_LIMIT {
            let mut h = vec![0.0; n * n];
            for i in 0..n {
                h[i * n + i] = gamma;
            }
            InverseHessian::Dense { h, n }
        } else {
            InverseHessian::Limited { pairs: Vec::new(), gamma }
        }
    }

    fn apply(&self, g: &[f64]) -> Vec<f64> {
        match self {
            InverseHessian::Dense { h, n } => {
                (0..*n).map(|i| dot(&h[i * n..(i + 1) * n], g)).collect()
            }
            InverseHessian::Limited { pairs, gamma } => {
                let mut q = g.to_vec();
                let mut alphas = Vec::with_capacity(pairs.len());
                for (s, y, rho) in pairs.iter().rev() {
                    let a = rho * dot(s, &q);
                    axpy(-a, y, &mut q);
                    alphas.push(a);
                }
                for v in &mut q {
                    *v *= gamma;
                }
                for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
                    let b = rho * dot(y, &q);
                    axpy(a - b, s, &mut q);
                }
                q
            }
        }
    }

    /// Secant update; the first call also rescales the initial matrix.
    fn update(&mut self, s: &[f64], y: &[f64], first: bool) {
        let sy = dot(s, y);
        if !(sy > 0.0 && sy.is_finite()) {
            return;
        }
        let yy = dot(y, y);
        match self {
            InverseHessian::Dense { h, n } => {
                let n = *n;
                if first {
                    *h = vec![0.0; n * n];
                    for i in 0..n {
                        h[i * n + i] = sy / yy;
                    }
                }
                let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
                let yhy = dot(y, &hy);
                let coef = (sy + yhy) / (sy * sy);
                for i in 0..n {
                    for j in 0..n {
                        h[i * n + j] += coef * s[i] * s[j] - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                    }
                }
            }
            InverseHessian::Limited { pairs, gamma } => {
                *gamma = sy / yy;
                if pairs.len() == LBFGS_MEMORY {
                    pairs.remove(0);
                }
                pairs.push((s.to_vec(), y.to_vec(), 1.0 / sy));
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Evaluation in canonical (rank) coordinates of the free weights.
struct RankedEval {
    f: f64,
    grad: Vec<f64>,
    residual_vec: Vec<f64>,
    residual: f64,
    masses: Vec<f64>,
    value: f64,
}

struct Ranked<'a> {
    problem: &'a ExtendedProblem,
    n_s: usize,
    target: Vec<f64>,
}

impl Ranked<'_> {
    fn to_psi(&self, x: &[f64]) -> Vec<f64> {
        let mut psi = vec![0.0; self.problem.n() + 1];
        for (r, &i) in self.problem.order().iter().enumerate() {
            psi[i] = x[r];
        }
        psi
    }

    fn eval(&self, x: &[f64]) -> RankedEval {
        let psi = self.to_psi(x);
        let e = evaluate(self.problem, &psi, self.n_s);
        let n = self.problem.n();
        let order = self.problem.order();
        let grad: Vec<f64> = order.iter().map(|&i| e.masses[i] - self.target[i]).collect();
        let mut residual_vec = grad.clone();
        residual_vec.push(e.masses[n] - self.target[n]);
        let residual = max_residual(self.problem, &e.masses);
        RankedEval { f: -e.value, grad, residual_vec, residual, masses: e.masses, value: e.value }
    }
}

/// Maximises `Φ` over the atom weights with the reservoir weight fixed at 0.
///
/// Quasi-Newton directions with backtracking; when a direction fails to
/// increase `Φ` the step falls back to scaled gradient ascent with halving.
/// Exhausting `max_iter` or stalling returns a state flagged as not converged.
pub fn solve(problem: &ExtendedProblem, opts: &SolveOptions) -> Result<DualState> {
    if !(opts.tol > 0.0) || opts.n_s == 0 {
        return Err(Error::Domain(format!("tol must be positive and n_s nonzero, got {} and {}", opts.tol, opts.n_s)));
    }
    let n = problem.n();
    let cost = problem.cost();
    let ranked = Ranked { problem, n_s: opts.n_s, target: problem.extended_masses() };
    let init = initial_weights(problem, opts.n_s);
    let mut x: Vec<f64> = problem.order().iter().map(|&i| init[i]).collect();
    let threshold = opts.tol * problem.min_extended_mass();

    // Inverse-Hessian scale: dGᵢ/dΨᵢ ≈ |B| / (wᵢ h'(p)).
    let pts = problem.nu().points();
    let mut w_sum = 0.0;
    for &i in problem.order() {
        w_sum += cost.w(pts[i]);
    }
    let gamma = w_sum / n as f64 * cost.dh_dp(0.5 * problem.p_cap()) / cost.domain().len();
    let mut hess = InverseHessian::new(n, gamma);
    let mut first_update = true;

    let mut cur = ranked.eval(&x);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut step = 0.0;
    loop {
        if opts.trace {
            trace.push(TraceRow { iteration: iterations, residual: cur.residual, dual_value: cur.value, step });
        }
        debug!("iter {iterations}: residual {:.3e}, dual {:.12e}", cur.residual, cur.value);
        if cur.residual <= threshold {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let mut dir: Vec<f64> = hess.apply(&cur.grad).into_iter().map(|v| -v).collect();
        let mut slope = dot(&cur.grad, &dir);
        let mut quasi_newton = true;
        if !(slope < 0.0 && slope.is_finite()) {
            dir = cur.grad.iter().map(|g| -gamma * g).collect();
            slope = dot(&cur.grad, &dir);
            quasi_newton = false;
        }
        let mut accepted = line_search(&ranked, &x, &cur, &dir, slope);
        if accepted.is_none() && quasi_newton {
            debug!("iter {iterations}: quasi-Newton direction rejected, falling back to gradient ascent");
            hess = InverseHessian::new(n, gamma);
            first_update = true;
            dir = cur.grad.iter().map(|g| -gamma * g).collect();
            slope = dot(&cur.grad, &dir);
            accepted = line_search(&ranked, &x, &cur, &dir, slope);
        }
        let Some((t, x_new, next)) = accepted else {
            warn!("line search stalled at iteration {iterations} (residual {:.3e})", cur.residual);
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        hess.update(&s, &y, first_update);
        if dot(&s, &y) > 0.0 {
            first_update = false;
        }
        step = t;
        x = x_new;
        cur = next;
    }

    if converged {
        info!("converged in {iterations} iterations, residual {:.3e}", cur.residual);
    } else {
        warn!("not converged after {iterations} iterations, residual {:.3e}", cur.residual);
    }
    Ok(DualState {
        psi: ranked.to_psi(&x),
        masses: cur.masses,
        residual: cur.residual,
        dual_value: cur.value,
        iterations,
        converged,
        n_s: opts.n_s,
        rule: Midpoint::RULE_ID.to_string(),
        tol: opts.tol,
        duality_tol: opts.duality_tol,
        trace,
    })
}

/// Backtracking on `f = −Φ`. Besides the Armijo condition, a step is taken
/// when `f` is flat to roundoff but the residual norm drops, which is what
/// happens in the last iterations.
fn line_search(
    ranked: &Ranked<'_>,
    x: &[f64],
    cur: &RankedEval,
    dir: &[f64],
    slope: f64,
) -> Option<(f64, Vec<f64>, RankedEval)> {
    let r_norm = dot(&cur.residual_vec, &cur.residual_vec).sqrt();
    let flat = 1e-13 * (1.0 + cur.f.abs());
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        let x_new: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + t * d).collect();
        let next = ranked.eval(&x_new);
        if next.f.is_finite() {
            let armijo = next.f <= cur.f + ARMIJO * t * slope;
            let roundoff = next.f <= cur.f + flat && dot(&next.residual_vec, &next.residual_vec).sqrt() < r_norm;
            if armijo || roundoff {
                return Some((t, x_new, next));
            }
        }
        t *= 0.5;
    }
    None
}

/// `p̄_ψ(s) = maxᵢ q(s, yᵢ, ψᵢ + τ)`.
pub fn surface_formula(problem: &ExtendedProblem, psi: &[f64], tau: f64, s: f64) -> f64 {
    let cost = problem.cost();
    problem
        .nu()
        .points()
        .iter()
        .zip(psi)
        .map(|(&y, &w)| cost.q(s, y, w + tau))
        .fold(0.0, f64::max)
}

/// `I(τ) = ∫_B p̄_ψ(s) ds` under the midpoint rule.
pub fn surface_mass(problem: &ExtendedProblem, psi: &[f64], tau: f64, n_s: usize) -> f64 {
    Midpoint::new(problem.cost().domain(), n_s).integrate(|s| surface_formula(problem, psi, tau, s))
}

/// The constant `τ_ψ` with `I(τ_ψ) = 1`, found by bisection between
/// `m − max ψ` and `M − max ψ`.
///
/// `psi` holds the atom weights only; see [`surface_mass`].
pub fn tau_bisection(problem: &ExtendedProblem, psi: &[f64], n_s: usize) -> Result<f64> {
    if psi.len() != problem.n() || psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("tau bisection needs one finite weight per atom".into()));
    }
    let cost = problem.cost();
    let quad = Midpoint::new(cost.domain(), n_s);
    let max_psi = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut floor = f64::INFINITY;
    for &y in problem.nu().points() {
        for s in quad.nodes() {
            floor = floor.min(cost.c(s, 0.0, y));
        }
    }
    let mut lo = floor - max_psi;
    let mut hi = cap_level(cost, problem.nu()) - max_psi;
    let i_hi = surface_mass(problem, psi, hi, n_s);
    if i_hi < 1.0 - 1e-12 {
        return Err(Error::Internal(format!("tau bracket failure: I(tau_1) = {i_hi} < 1")));
    }
    if surface_mass(problem, psi, lo, n_s) > 1.0 {
        return Err(Error::Internal("tau bracket failure: I(tau_0) > 1".into()));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let i_mid = surface_mass(problem, psi, mid, n_s);
        if (i_mid - 1.0).abs() <= 1e-10 {
            return Ok(mid);
        }
        if mid <= lo || mid >= hi {
            break;
        }
        if i_mid < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    let i_mid = surface_mass(problem, psi, mid, n_s);
    if (i_mid - 1.0).abs() <= 1e-10 {
        Ok(mid)
    } else {
        Err(Error::Internal(format!("tau bisection stalled with I = {i_mid}")))
    }
}
