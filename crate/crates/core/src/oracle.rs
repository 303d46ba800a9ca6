//! Desk-scale verification by exact discrete transport.
//!
//! Piecewise-constant candidate surfaces on `k` columns are discretised into
//! uniform cells, each transported exactly to `ν` with a transportation
//! simplex. The best candidate cost is an upper bound for the continuous
//! minimum up to the cell-centre quadrature error.

use rayon::prelude::*;
use serde::Serialize;

use crate::cost::{SeparableCost, TargetPoint};
use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

pub const MAX_COLUMNS: usize = 3;
pub const MAX_MESH: usize = 12;
pub const MAX_CELLS: usize = 512;
pub const MAX_ATOMS: usize = 8;
/// Horizontal cells across all of `B`; each column gets `SUBCOLUMNS / k`.
pub const SUBCOLUMNS: usize = 30;
/// Vertical cells per column.
pub const ROWS: usize = 16;
const MAX_PIVOTS: usize = 100_000;

/// Uniform cells under a piecewise-constant surface.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSource {
    pub columns: usize,
    pub rows: usize,
    pub heights: Vec<f64>,
    /// Cell centres `(s, p)`.
    pub centers: Vec<(f64, f64)>,
    pub masses: Vec<f64>,
}

impl GridSource {
    /// Cells of the surface with height `heights[j]` on the `j`-th of
    /// `heights.len()` equal columns of the cost's domain.
    pub fn new(cost: &SeparableCost, heights: &[f64], rows: usize) -> Result<Self> {
        let k = heights.len();
        if k == 0 || rows == 0 {
            return Err(Error::Domain("grid source needs at least one column and one row".into()));
        }
        if heights.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(Error::Domain(format!("column heights must be nonnegative, got {heights:?}")));
        }
        let b = cost.domain();
        let sub = (SUBCOLUMNS / k).max(1);
        let dw = b.len() / (k * sub) as f64;
        let total: f64 = heights.iter().map(|h| h * b.len() / k as f64).sum();
        if !(total > 0.0) {
            return Err(Error::Domain("grid source has no mass".into()));
        }
        let mut centers = Vec::new();
        let mut masses = Vec::new();
        for (j, &h) in heights.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            let dh = h / rows as f64;
            for c in 0..sub {
                let s = b.lo + ((j * sub + c) as f64 + 0.5) * dw;
                for r in 0..rows {
                    centers.push((s, (r as f64 + 0.5) * dh));
                    masses.push(dw * dh / total);
                }
            }
        }
        if masses.len() > MAX_CELLS {
            return Err(Error::SizeLimit(format!("{} source cells exceed the limit of {MAX_CELLS}", masses.len())));
        }
        Ok(GridSource { columns: k, rows, heights: heights.to_vec(), centers, masses })
    }
}

/// Optimal plan of a finite transportation problem with dual certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct OtSolution {
    pub cost: f64,
    /// Basic cells `(source, target, amount)`.
    pub plan: Vec<(usize, usize, f64)>,
    /// Source potentials.
    pub u: Vec<f64>,
    /// Target potentials; `Σ aᵢ uᵢ + Σ bⱼ vⱼ = cost` at optimality.
    pub v: Vec<f64>,
}

/// Exact optimum of `min Σ cᵢⱼ xᵢⱼ` over plans with marginals `a` and `b`.
///
/// `costs` is row-major `a.len() × b.len()`. Transportation simplex started
/// from the northwest-corner basis.
pub fn transport_simplex(a: &[f64], b: &[f64], costs: &[f64]) -> Result<OtSolution> {
    let m = a.len();
    let n = b.len();
    if m == 0 || n == 0 || costs.len() != m * n {
        return Err(Error::Domain("transportation problem has inconsistent sizes".into()));
    }
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    if (sa - sb).abs() > 1e-12 * sa.max(sb) {
        return Err(Error::Domain(format!("unbalanced transportation problem: {sa} vs {sb}")));
    }
    let c = |i: usize, j: usize| costs[i * n + j];

    // Northwest corner: a staircase spanning tree with m + n - 1 cells.
    let mut basis: Vec<(usize, usize, f64)> = Vec::with_capacity(m + n - 1);
    let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let x = ra[i].min(rb[j]).max(0.0);
        basis.push((i, j, x));
        ra[i] -= x;
        rb[j] -= x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if j == n - 1 || (i < m - 1 && ra[i] <= rb[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }
    // Absorb the balancing roundoff in the last cell.
    if let Some(last) = basis.last_mut() {
        last.2 = (last.2 + ra[m - 1]).max(0.0);
    }

    let scale = costs.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    let eps = 1e-12 * scale;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut degenerate_run = 0usize;
    for _ in 0..MAX_PIVOTS {
        let adj = adjacency(&basis, m, n);
        potentials(&basis, &adj, m, n, &c, &mut u, &mut v)?;
        // Entering cell: most negative reduced cost, or the first negative
        // one after a long run of degenerate pivots (anti-cycling).
        let bland = degenerate_run > 50;
        let mut enter = None;
        let mut best = -eps;
        'scan: for ii in 0..m {
            for jj in 0..n {
                let d = c(ii, jj) - u[ii] - v[jj];
                if d < best {
                    enter = Some((ii, jj));
                    best = d;
                    if bland {
                        break 'scan;
                    }
                }
            }
        }
        let Some((ei, ej)) = enter else {
            let cost = basis.iter().map(|&(i, j, x)| c(i, j) * x).sum();
            return Ok(OtSolution { cost, plan: basis, u, v });
        };
        let path = tree_path(&basis, &adj, ei, m + ej, m, n)?;
        // Edges along the path from row ei to column ej alternate −, +, −, …
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (pos, &e) in path.iter().enumerate() {
            if pos % 2 == 0 && basis[e].2 < theta {
                theta = basis[e].2;
                leave = e;
            }
        }
        for (pos, &e) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis[e].2 -= theta;
            } else {
                basis[e].2 += theta;
            }
        }
        degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
        basis[leave] = (ei, ej, theta);
        for e in &mut basis {
            if e.2 < 0.0 {
                e.2 = 0.0;
            }
        }
    }
    Err(Error::Internal(format!("transportation simplex exceeded {MAX_PIVOTS} pivots")))
}

/// Node adjacency of the basis tree; rows are nodes `0..m`, columns `m..m+n`.
fn adjacency(basis: &[(usize, usize, f64)], m: usize, n: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); m + n];
    for (e, &(i, j, _)) in basis.iter().enumerate() {
        adj[i].push(e);
        adj[m + j].push(e);
    }
    adj
}

fn other_end(edge: (usize, usize, f64), node: usize, m: usize) -> usize {
    if node < m {
        m + edge.1
    } else {
        edge.0
    }
}

fn potentials(
    basis: &[(usize, usize, f64)],
    adj: &[Vec<usize>],
    m: usize,
    n: usize,
    c: &impl Fn(usize, usize) -> f64,
    u: &mut [f64],
    v: &mut [f64],
) -> Result<()> {
    let mut seen = vec![false; m + n];
    let mut queue = std::collections::VecDeque::from([0usize]);
    seen[0] = true;
    u[0] = 0.0;
    let mut count = 1;
    while let Some(node) = queue.pop_front() {
        for &e in &adj[node] {
            let other = other_end(basis[e], node, m);
            if seen[other] {
                continue;
            }
            let (i, j, _) = basis[e];
            if other < m {
                u[other] = c(i, j) - v[j];
            } else {
                v[other - m] = c(i, j) - u[i];
            }
            seen[other] = true;
            count += 1;
            queue.push_back(other);
        }
    }
    if count != m + n {
        return Err(Error::Internal("transportation basis is not a spanning tree".into()));
    }
    Ok(())
}

/// Edge indices on the tree path from `from` to `to`.
fn tree_path(basis: &[(usize, usize, f64)], adj: &[Vec<usize>], from: usize, to: usize, m: usize, n: usize) -> Result<Vec<usize>> {
    let mut via = vec![usize::MAX; m + n];
    let mut seen = vec![false; m + n];
    let mut queue = std::collections::VecDeque::from([from]);
    seen[from] = true;
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &e in &adj[node] {
            let other = other_end(basis[e], node, m);
            if !seen[other] {
                seen[other] = true;
                via[other] = e;
                queue.push_back(other);
            }
        }
    }
    if !seen[to] {
        return Err(Error::Internal("entering cell does not close a cycle".into()));
    }
    let mut path = Vec::new();
    let mut node = to;
    while node != from {
        let e = via[node];
        path.push(e);
        node = other_end(basis[e], node, m);
    }
    path.reverse();
    Ok(path)
}

/// Exact transport cost from the grid source to `ν`, costs at cell centres.
pub fn exact_discrete_ot(cost: &SeparableCost, source: &GridSource, nu: &DiscreteMeasure) -> Result<OtSolution> {
    if source.masses.len() > MAX_CELLS {
        return Err(Error::SizeLimit(format!("{} source cells exceed {MAX_CELLS}", source.masses.len())));
    }
    if nu.len() > MAX_ATOMS {
        return Err(Error::SizeLimit(format!("{} atoms exceed {MAX_ATOMS}", nu.len())));
    }
    let pts: &[TargetPoint] = nu.points();
    let costs: Vec<f64> = source
        .centers
        .iter()
        .flat_map(|&(s, p)| pts.iter().map(move |&y| cost.c(s, p, y)))
        .collect();
    transport_simplex(&source.masses, nu.masses(), &costs)
}

/// Transport cost of one piecewise-constant surface.
pub fn surface_cost(cost: &SeparableCost, nu: &DiscreteMeasure, heights: &[f64]) -> Result<f64> {
    let source = GridSource::new(cost, heights, ROWS)?;
    Ok(exact_discrete_ot(cost, &source, nu)?.cost)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub heights: Vec<f64>,
    pub cost: f64,
    pub candidates: usize,
    pub columns: usize,
    pub mesh_m: usize,
}

/// All ways to write `total` as an ordered sum of `parts` nonnegative integers.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Exhaustive search over surfaces whose column masses are multiples of `1/mesh_m`.
pub fn brute_force_surface(cost: &SeparableCost, nu: &DiscreteMeasure, k: usize, mesh_m: usize) -> Result<OracleResult> {
    if k == 0 || k > MAX_COLUMNS {
        return Err(Error::SizeLimit(format!("k = {k} columns outside 1..={MAX_COLUMNS}")));
    }
    if mesh_m == 0 || mesh_m > MAX_MESH {
        return Err(Error::SizeLimit(format!("mesh_m = {mesh_m} outside 1..={MAX_MESH}")));
    }
    if nu.len() > MAX_ATOMS {
        return Err(Error::SizeLimit(format!("{} atoms exceed {MAX_ATOMS}", nu.len())));
    }
    let col_len = cost.domain().len() / k as f64;
    let candidates: Vec<Vec<f64>> = compositions(mesh_m, k)
        .into_iter()
        .map(|parts| parts.iter().map(|&c| c as f64 / mesh_m as f64 / col_len).collect())
        .collect();
    let costs: Vec<Result<f64>> = candidates.par_iter().map(|h| surface_cost(cost, nu, h)).collect();
    let mut best: Option<(usize, f64)> = None;
    for (idx, c) in costs.into_iter().enumerate() {
        let c = c?;
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((idx, c));
        }
    }
    let (idx, best_cost) = best.ok_or_else(|| Error::Internal("no oracle candidates".into()))?;
    Ok(OracleResult { heights: candidates[idx].clone(), cost: best_cost, candidates: candidates.len(), columns: k, mesh_m })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub solver_energy: f64,
    pub oracle_cost: f64,
    pub gap: f64,
    pub allowance: f64,
    pub lower_bound_holds: bool,
    pub within_allowance: bool,
    pub pass: bool,
}

/// Checks `solver ≤ oracle` and `oracle − solver ≤ 2% · oracle + 1e-3`.
pub fn compare(solver_energy: f64, oracle: &OracleResult) -> CompareReport {
    let gap = oracle.cost - solver_energy;
    let allowance = 0.02 * oracle.cost.abs() + 1e-3;
    let lower_bound_holds = solver_energy <= oracle.cost + 1e-9 * (1.0 + oracle.cost.abs());
    let within_allowance = gap <= allowance;
    CompareReport {
        solver_energy,
        oracle_cost: oracle.cost,
        gap,
        allowance,
        lower_bound_holds,
        within_allowance,
        pass: lower_bound_holds && within_allowance,
    }
}
