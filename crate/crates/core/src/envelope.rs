//! Column-wise Laguerre geometry.
//!
//! For fixed `s`, atom `i` competes through the line
//! `ℓᵢ(h) = g(s,yᵢ) − Ψᵢ + w(yᵢ) h` and the reservoir through `ℓ(h) = −Ψ_res`.
//! The cell of each owner in the column is the set of `h ∈ [h(0), h(P)]` on
//! which its line is the lowest, mapped back to `p` through `h⁻¹`.
//!
//! Ties between lines with equal slope and intercept go to the line that comes
//! first in slope order, and breakpoints belong to the piece on their right
//! (pieces are half-open). Both rules only move sets of measure zero.

use serde::{Deserialize, Serialize};

use crate::measures::ExtendedProblem;

/// Owner of a piece of a column: an atom of `ν` (input index) or the reservoir.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Owner {
    Atom(usize),
    Reservoir,
}

impl Owner {
    /// Position in an extended vector of length `n + 1` (reservoir last).
    pub fn slot(self, n: usize) -> usize {
        match self {
            Owner::Atom(i) => i,
            Owner::Reservoir => n,
        }
    }

    pub fn label(self) -> String {
        match self {
            Owner::Atom(i) => i.to_string(),
            Owner::Reservoir => "reservoir".to_string(),
        }
    }
}

/// A line `intercept + slope · h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub owner: Owner,
    pub intercept: f64,
    pub slope: f64,
}

impl Line {
    #[inline]
    pub fn at(&self, h: f64) -> f64 {
        self.intercept + self.slope * h
    }
}

/// A piece of the lower envelope over `[h_lo, h_hi)`, with its `p` image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub owner: Owner,
    pub h_lo: f64,
    pub h_hi: f64,
    pub p_lo: f64,
    pub p_hi: f64,
}

impl Piece {
    pub fn p_length(&self) -> f64 {
        self.p_hi - self.p_lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnEnvelope {
    pub s: f64,
    pub pieces: Vec<Piece>,
    pub h_range: [f64; 2],
    pub p_cap: f64,
}

/// Lines on the hull together with the `h` at which each becomes minimal.
#[derive(Debug, Default)]
pub struct HullStack {
    entries: Vec<(Line, f64)>,
}

impl HullStack {
    /// Lower envelope of `lines`, which must arrive with non-increasing slope.
    pub fn build(&mut self, lines: impl IntoIterator<Item = Line>) {
        self.entries.clear();
        for line in lines {
            loop {
                let Some(&(top, start)) = self.entries.last() else {
                    self.entries.push((line, f64::NEG_INFINITY));
                    break;
                };
                if line.slope == top.slope {
                    if line.intercept < top.intercept {
                        self.entries.pop();
                        continue;
                    }
                    break;
                }
                debug_assert!(line.slope < top.slope, "lines must arrive with non-increasing slope");
                let x = (line.intercept - top.intercept) / (top.slope - line.slope);
                if x <= start {
                    self.entries.pop();
                    continue;
                }
                self.entries.push((line, x));
                break;
            }
        }
    }

    /// Pieces of the hull clipped to `[h0, h1]`, zero-width pieces dropped.
    /// `p` endpoints are filled with `NaN`; see [`assign_pressures`].
    pub fn clip_into(&self, h0: f64, h1: f64, out: &mut Vec<Piece>) {
        out.clear();
        for (j, &(line, start)) in self.entries.iter().enumerate() {
            let end = self.entries.get(j + 1).map_or(f64::INFINITY, |e| e.1);
            let lo = start.max(h0);
            let hi = end.min(h1);
            if hi > lo {
                out.push(Piece { owner: line.owner, h_lo: lo, h_hi: hi, p_lo: f64::NAN, p_hi: f64::NAN });
            }
        }
    }
}

/// Fills `p_lo`/`p_hi` so that consecutive pieces share endpoints and the
/// column runs exactly from `0` to `p_cap`.
pub fn assign_pressures(pieces: &mut [Piece], h_inv: impl Fn(f64) -> f64, p_cap: f64) {
    let n = pieces.len();
    let mut prev = 0.0;
    for (j, piece) in pieces.iter_mut().enumerate() {
        piece.p_lo = prev;
        piece.p_hi = if j + 1 == n { p_cap } else { h_inv(piece.h_hi).clamp(prev, p_cap) };
        prev = piece.p_hi;
    }
}

/// Lower envelope of arbitrary lines over `[h0, h1]`, in `h` only.
///
/// Lines are stably sorted by decreasing slope, so among identical lines the
/// earliest one wins.
pub fn lower_envelope(lines: &[Line], h0: f64, h1: f64) -> Vec<Piece> {
    let mut sorted = lines.to_vec();
    sorted.sort_by(|a, b| b.slope.total_cmp(&a.slope));
    let mut stack = HullStack::default();
    stack.build(sorted);
    let mut out = Vec::new();
    stack.clip_into(h0, h1, &mut out);
    out
}

/// Per-problem data shared by all columns: slopes in canonical order and the
/// `h` range of the strip.
#[derive(Debug, Clone)]
pub struct ColumnContext<'a> {
    problem: &'a ExtendedProblem,
    slopes: Vec<f64>,
    h0: f64,
    h1: f64,
}

/// Reusable buffers for column evaluation.
#[derive(Debug, Default)]
pub struct ColumnScratch {
    stack: HullStack,
    pub pieces: Vec<Piece>,
}

impl<'a> ColumnContext<'a> {
    pub fn new(problem: &'a ExtendedProblem) -> Self {
        let cost = problem.cost();
        let pts = problem.nu().points();
        let slopes = problem.order().iter().map(|&i| cost.w(pts[i])).collect();
        ColumnContext { problem, slopes, h0: cost.h(0.0), h1: cost.h(problem.p_cap()) }
    }

    pub fn problem(&self) -> &ExtendedProblem {
        self.problem
    }

    pub fn h_range(&self) -> [f64; 2] {
        [self.h0, self.h1]
    }

    /// Envelope pieces of column `s` for weights `psi` (length `n + 1`, input
    /// order, reservoir last), written into `scratch.pieces`.
    pub fn pieces_into(&self, s: f64, psi: &[f64], scratch: &mut ColumnScratch) {
        let problem = self.problem;
        let cost = problem.cost();
        let pts = problem.nu().points();
        let n = problem.n();
        debug_assert_eq!(psi.len(), n + 1);
        let atoms = problem.order().iter().zip(&self.slopes).map(|(&i, &slope)| Line {
            owner: Owner::Atom(i),
            intercept: cost.g(s, pts[i]) - psi[i],
            slope,
        });
        let reservoir = Line { owner: Owner::Reservoir, intercept: -psi[n], slope: 0.0 };
        scratch.stack.build(atoms.chain(std::iter::once(reservoir)));
        scratch.stack.clip_into(self.h0, self.h1, &mut scratch.pieces);
        assign_pressures(&mut scratch.pieces, |v| cost.h_inv(v), problem.p_cap());
    }

    pub fn build(&self, s: f64, psi: &[f64]) -> ColumnEnvelope {
        let mut scratch = ColumnScratch::default();
        self.pieces_into(s, psi, &mut scratch);
        ColumnEnvelope { s, pieces: scratch.pieces, h_range: [self.h0, self.h1], p_cap: self.problem.p_cap() }
    }
}

/// Envelope of column `s` for weights `psi` (length `n + 1`, reservoir last).
pub fn build_column(s: f64, psi: &[f64], problem: &ExtendedProblem) -> ColumnEnvelope {
    ColumnContext::new(problem).build(s, psi)
}

/// `p`-length owned by each piece's owner; the lengths sum to `P`.
pub fn column_intervals(env: &ColumnEnvelope) -> Vec<(Owner, f64)> {
    env.pieces.iter().map(|p| (p.owner, p.p_length())).collect()
}

/// Surface height: bottom of the reservoir piece, or `P` if the reservoir is absent.
pub fn column_surface(env: &ColumnEnvelope) -> f64 {
    env.pieces
        .iter()
        .find(|p| p.owner == Owner::Reservoir)
        .map_or(env.p_cap, |p| p.p_lo)
}

impl ColumnEnvelope {
    /// Owner of the point at height `p` (top piece includes `p = P`).
    pub fn owner_at(&self, p: f64) -> Option<Owner> {
        if !(0.0..=self.p_cap).contains(&p) {
            return None;
        }
        self.pieces
            .iter()
            .find(|piece| p >= piece.p_lo && p < piece.p_hi)
            .or(self.pieces.last())
            .map(|piece| piece.owner)
    }

    pub fn surface(&self) -> f64 {
        column_surface(self)
    }
}
