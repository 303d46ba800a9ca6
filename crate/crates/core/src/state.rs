//! The physical answer: free surface, cell assignment, energy and derived fields.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::cost::CostConstants;
use crate::dual::{DualState, SolveOptions};
use crate::envelope::{ColumnContext, ColumnEnvelope, Owner};
use crate::error::{Error, Result};
use crate::measures::ExtendedProblem;
use crate::quadrature::Midpoint;

/// Energy-minimising background state sampled on the quadrature columns.
///
/// Energies are per unit total mass: multiply by the physical mass of the
/// fluid to recover joules.
#[derive(Debug, Clone)]
pub struct MlmState {
    problem: ExtendedProblem,
    quad: Midpoint,
    /// `p̄` at each column midpoint.
    pub surface: Vec<f64>,
    /// Envelope of each column.
    pub columns: Vec<ColumnEnvelope>,
    /// Reported energy (the dual value).
    pub energy: f64,
    pub dual_value: f64,
    /// Direct quadrature of the cost below the surface.
    pub primal_energy: f64,
    /// Mass assigned to each atom, input order.
    pub assigned_mass: Vec<f64>,
    /// `∫_B p̄ ds`.
    pub surface_integral: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub psi: Vec<f64>,
    pub constants: Option<CostConstants>,
}

/// Builds the state from a dual solution.
///
/// A non-converged dual is refused unless `force` is set; with `force`,
/// violated invariants are logged instead of returned as errors.
pub fn extract_state(dual: &DualState, problem: &ExtendedProblem, force: bool) -> Result<MlmState> {
    if !dual.converged && !force {
        return Err(Error::NotConverged { iterations: dual.iterations, residual: dual.residual });
    }
    let n = problem.n();
    if dual.psi.len() != n + 1 {
        return Err(Error::InvalidState(format!("expected {} weights, got {}", n + 1, dual.psi.len())));
    }
    let cost = problem.cost();
    let quad = Midpoint::new(cost.domain(), dual.n_s);
    let ctx = ColumnContext::new(problem);
    let columns: Vec<ColumnEnvelope> = (0..quad.n).into_par_iter().map(|k| ctx.build(quad.node(k), &dual.psi)).collect();

    let pts = problem.nu().points();
    let width = quad.width();
    let mut primal = 0.0;
    let mut assigned = vec![0.0; n];
    let mut integral = 0.0;
    let mut surface = Vec::with_capacity(columns.len());
    for env in &columns {
        for piece in &env.pieces {
            if let Owner::Atom(i) = piece.owner {
                let y = pts[i];
                primal += cost.g(env.s, y) * piece.p_length() + cost.w(y) * cost.h_integral(piece.p_lo, piece.p_hi);
                assigned[i] += piece.p_length();
            }
        }
        let p_bar = env.surface();
        integral += p_bar;
        surface.push(p_bar);
    }
    primal *= width;
    integral *= width;
    for m in &mut assigned {
        *m *= width;
    }

    let mut problems = Vec::new();
    if (integral - 1.0).abs() > 1e-6 {
        problems.push(format!("surface integrates to {integral}, expected 1"));
    }
    let gap = (primal - dual.dual_value).abs();
    if gap > dual.duality_tol * (1.0 + dual.dual_value.abs()) {
        problems.push(format!("duality gap {gap:.3e} exceeds tolerance (primal {primal}, dual {})", dual.dual_value));
    }
    if !problems.is_empty() {
        let msg = problems.join("; ");
        if force {
            warn!("forced extraction: {msg}");
        } else {
            return Err(Error::InvalidState(msg));
        }
    }

    Ok(MlmState {
        problem: problem.clone(),
        quad,
        surface,
        columns,
        energy: dual.dual_value,
        dual_value: dual.dual_value,
        primal_energy: primal,
        assigned_mass: assigned,
        surface_integral: integral,
        residual: dual.residual,
        iterations: dual.iterations,
        converged: dual.converged,
        psi: dual.psi.clone(),
        constants: cost.constants().copied(),
    })
}

/// One sample of the derived meteorological fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldSample {
    pub s: f64,
    pub p: f64,
    pub atom: usize,
    /// Zonal wind.
    pub u: f64,
    /// Temperature.
    pub temperature: f64,
    /// `½u² + Cp T`.
    pub energy_density: f64,
}

impl MlmState {
    pub fn problem(&self) -> &ExtendedProblem {
        &self.problem
    }

    pub fn quadrature(&self) -> Midpoint {
        self.quad
    }

    /// Column midpoints.
    pub fn nodes(&self) -> Vec<f64> {
        self.quad.nodes().collect()
    }

    /// `p̄(s)` from the exact envelope at an arbitrary `s ∈ B`.
    pub fn surface_at(&self, s: f64) -> Result<f64> {
        let b = self.problem.cost().domain();
        if !b.contains(s) {
            return Err(Error::Domain(format!("s = {s} outside [{}, {}]", b.lo, b.hi)));
        }
        Ok(ColumnContext::new(&self.problem).build(s, &self.psi).surface())
    }

    /// Owner of the point `(s, p)`, read from the column containing `s`.
    pub fn transport_map(&self, s: f64, p: f64) -> Result<Owner> {
        let b = self.problem.cost().domain();
        let cap = self.problem.p_cap();
        if !b.contains(s) || !(0.0..=cap).contains(&p) {
            return Err(Error::Domain(format!("({s}, {p}) lies outside the strip [{}, {}] x [0, {cap}]", b.lo, b.hi)));
        }
        let env = &self.columns[self.quad.column_of(s)];
        env.owner_at(p).ok_or_else(|| Error::Internal(format!("column at s = {} has no pieces", env.s)))
    }

    /// Wind and temperature at each point below the surface (MLM cost only).
    /// Points above the surface are skipped.
    pub fn derived_fields(&self, points: &[(f64, f64)]) -> Result<Vec<FieldSample>> {
        let Some(c) = self.constants else {
            return Err(Error::UnsupportedCost(format!(
                "derived fields need the MLM cost, not {}",
                self.problem.cost().kind().name()
            )));
        };
        let pts = self.problem.nu().points();
        let mut out = Vec::new();
        for &(s, p) in points {
            if let Owner::Atom(i) = self.transport_map(s, p)? {
                let y = pts[i];
                let u = c.zonal_wind(s, y.z);
                let temperature = c.temperature(p, y.theta);
                out.push(FieldSample { s, p, atom: i, u, temperature, energy_density: 0.5 * u * u + c.cp * temperature });
            }
        }
        Ok(out)
    }

    /// Regular grid of `ns × np` points spanning `B × [0, P]`, endpoints included.
    pub fn field_grid(&self, ns: usize, np: usize) -> Vec<(f64, f64)> {
        let b = self.problem.cost().domain();
        let p_range = crate::cost::Interval { lo: 0.0, hi: self.problem.p_cap() };
        let ps: Vec<f64> = p_range.linspace(np).collect();
        b.linspace(ns).flat_map(|s| ps.iter().map(move |&p| (s, p))).collect()
    }

    /// Writes `surface.csv`, `cells.csv`, `report.json` and optionally `cells.svg`.
    pub fn export(&self, out_dir: &Path, config: &serde_json::Value, opts: &SolveOptions, svg: bool) -> Result<()> {
        fs::create_dir_all(out_dir)?;
        let mut f = BufWriter::new(fs::File::create(out_dir.join("surface.csv"))?);
        writeln!(f, "s,p_bar")?;
        for (s, p) in self.quad.nodes().zip(&self.surface) {
            writeln!(f, "{s:.16e},{p:.16e}")?;
        }
        f.flush()?;

        let mut f = BufWriter::new(fs::File::create(out_dir.join("cells.csv"))?);
        writeln!(f, "s,owner,p_lo,p_hi")?;
        for env in &self.columns {
            for piece in &env.pieces {
                writeln!(f, "{:.16e},{},{:.16e},{:.16e}", env.s, piece.owner.label(), piece.p_lo, piece.p_hi)?;
            }
        }
        f.flush()?;

        let report = Report {
            energy: self.energy,
            dual_value: self.dual_value,
            primal_energy: self.primal_energy,
            residual: self.residual,
            converged: self.converged,
            iterations: self.iterations,
            p_cap: self.problem.p_cap(),
            reservoir_mass: self.problem.reservoir_mass(),
            surface_integral: self.surface_integral,
            n_s: self.quad.n,
            quadrature: Midpoint::RULE_ID,
            cost: self.problem.cost().kind().name(),
            psi: &self.psi,
            assigned_mass: &self.assigned_mass,
            target_mass: self.problem.nu().masses(),
            tol: opts.tol,
            duality_tol: opts.duality_tol,
            config,
        };
        let mut f = BufWriter::new(fs::File::create(out_dir.join("report.json"))?);
        serde_json::to_writer_pretty(&mut f, &report)?;
        writeln!(f)?;
        f.flush()?;

        if svg {
            fs::write(out_dir.join("cells.svg"), self.svg())?;
        }
        Ok(())
    }

    /// Debug picture of the cells (800×600, `p` increasing downward).
    pub fn svg(&self) -> String {
        const W: f64 = 800.0;
        const H: f64 = 600.0;
        let cap = self.problem.p_cap();
        let n = self.problem.n();
        let cols = self.columns.len();
        let stride = cols.div_ceil(800).max(1);
        let col_w = W / cols as f64 * stride as f64;
        let mut out = String::new();
        let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 800 600" width="800" height="600">"#);
        let _ = writeln!(out, r##"<rect x="0" y="0" width="800" height="600" fill="#ffffff"/>"##);
        for (k, env) in self.columns.iter().enumerate().step_by(stride) {
            let x = W * k as f64 / cols as f64;
            for piece in &env.pieces {
                let Owner::Atom(i) = piece.owner else { continue };
                let hue = 360.0 * i as f64 / n.max(1) as f64;
                let y0 = H * piece.p_lo / cap;
                let y1 = H * piece.p_hi / cap;
                let _ = writeln!(
                    out,
                    r#"<rect x="{x:.3}" y="{y0:.3}" width="{col_w:.3}" height="{:.3}" fill="hsl({hue:.1},70%,55%)"/>"#,
                    y1 - y0
                );
            }
        }
        let pts: Vec<String> = self
            .surface
            .iter()
            .enumerate()
            .map(|(k, p)| format!("{:.3},{:.3}", W * (k as f64 + 0.5) / cols as f64, H * p / cap))
            .collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#, pts.join(" "));
        out.push_str("</svg>\n");
        out
    }
}

#[derive(Serialize)]
struct Report<'a> {
    energy: f64,
    dual_value: f64,
    primal_energy: f64,
    residual: f64,
    converged: bool,
    iterations: usize,
    p_cap: f64,
    reservoir_mass: f64,
    surface_integral: f64,
    n_s: usize,
    quadrature: &'static str,
    cost: &'static str,
    psi: &'a [f64],
    assigned_mass: &'a [f64],
    target_mass: &'a [f64],
    tol: f64,
    duality_tol: f64,
    config: &'a serde_json::Value,
}
